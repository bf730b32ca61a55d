"""
Network instances, measurement models and persistence.
"""
