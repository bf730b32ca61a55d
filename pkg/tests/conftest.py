"""
Test configuration and fixtures.
"""

import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest

# Add src to path for testing
src_path = Path(__file__).parent.parent / "src"
if str(src_path) not in sys.path:
    sys.path.insert(0, str(src_path))

from robust_localization.config.settings import apply_overrides, load_config  # noqa: E402
from robust_localization.core.robust_cost import HuberRadii  # noqa: E402
from robust_localization.data.network import NetworkInstance, NetworkTopology, corner_positions  # noqa: E402
from robust_localization.data.noise_models import (  # noqa: E402
    FaultSpec,
    NoiseModel,
    exact_measurements,
    sample_measurements,
)


@pytest.fixture
def temp_dir():
    """Create a temporary directory for tests."""
    with tempfile.TemporaryDirectory() as tmp_dir:
        yield Path(tmp_dir)


@pytest.fixture
def square_instance():
    """Four sensors inside a 1 km square with corner anchors."""
    topology = NetworkTopology(
        n=4,
        m=4,
        edges=((0, 1), (0, 2), (0, 3), (1, 2), (2, 3)),
        anchor_links=((0, 0), (1, 2), (2, 3), (3, 1)),
        p=2,
    )
    positions = np.array([[250.0, 250.0], [750.0, 250.0], [750.0, 750.0], [250.0, 750.0]])
    return NetworkInstance(topology, positions, corner_positions(1000.0, 2), seed=0)


@pytest.fixture
def noiseless(square_instance):
    return exact_measurements(square_instance)


@pytest.fixture
def noisy(square_instance):
    rng = np.random.default_rng(7)
    return sample_measurements(square_instance, NoiseModel.gaussian(20.0), FaultSpec.none(), rng)


@pytest.fixture
def radii(square_instance):
    return HuberRadii.uniform(square_instance.topology, 80.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def fast_config(temp_dir):
    """Packaged scenario with budgets small enough for unit tests."""
    return apply_overrides(
        load_config(),
        {
            "experiment.trials": 3,
            "experiment.output_dir": str(temp_dir / "results"),
            "solver.max_iters": 150,
            "solver.stop_tol": 1e-6,
            "solver.activations": 40,
            "solver.inner_tol": 1e-7,
            "solver.max_inner_iters": 200,
            "bounds1d.trials": 10,
            "bounds1d.grid_points": 2001,
            "compare.trials": 2,
            "compare.sync_iters": 10,
            "compare.sigmas_m": [10.0, 40.0],
        },
    )
