"""
Robust Network Localization

Huber-based convex relaxation of range-only sensor network localization,
solved by a synchronous accelerated gradient method over simulated message
passing and by an asynchronous randomized block method, with a Monte Carlo
harness for outlier-noise experiments.
"""

__version__ = "0.1.0"
