"""
Counter-based random stream splitting.
"""

import numpy as np

# reserved counter for the instance draw; trial indices stay below it
INSTANCE_STREAM = 2 ** 32 - 1


def trial_rng(master_seed: int, trial: int) -> np.random.Generator:
    """Independent generator for trial ``trial``; identical in serial and threaded runs."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(trial)]))


def instance_rng(master_seed: int) -> np.random.Generator:
    """Generator used once to draw the network instance of an experiment."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), INSTANCE_STREAM]))
