"""
Experiment configuration.
"""

from .settings import ExperimentConfig, apply_overrides, load_config, save_config

__all__ = ["ExperimentConfig", "apply_overrides", "load_config", "save_config"]
