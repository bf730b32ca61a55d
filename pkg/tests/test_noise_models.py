"""
Tests for noise models and measurement sampling.
"""

import numpy as np
import pytest

from robust_localization.data.network import NetworkInstance, NetworkTopology
from robust_localization.data.noise_models import (
    FaultSpec,
    Measurements,
    NoiseKind,
    NoiseModel,
    OutlierDraw,
    exact_measurements,
    sample_measurements,
    sample_noise,
)
from robust_localization.errors import ConfigurationError, DomainError, ShapeMismatchError


@pytest.fixture
def pair_instance():
    """Two sensors 100 m apart, each 100 m from its own anchor."""
    topology = NetworkTopology(n=2, m=2, edges=((0, 1),), anchor_links=((0, 0), (1, 1)))
    positions = np.array([[0.0, 0.0], [100.0, 0.0]])
    anchors = np.array([[0.0, 100.0], [100.0, 100.0]])
    return NetworkInstance(topology, positions, anchors)


def test_noise_model_validation():
    NoiseModel.gaussian(0.0)
    with pytest.raises(ConfigurationError):
        NoiseModel.gaussian(-1.0)
    with pytest.raises(ConfigurationError):
        NoiseModel.laplace(0.0)
    with pytest.raises(ConfigurationError):
        NoiseModel("uniform", 1.0)


def test_noise_model_dict_round_trip():
    model = NoiseModel.cauchy(2.5)
    assert NoiseModel.from_dict(model.to_dict()) == model
    assert model.kind is NoiseKind.CAUCHY


def test_noiseless_measurements_equal_true_distances(square_instance):
    rng = np.random.default_rng(0)
    measurements = sample_measurements(square_instance, NoiseModel.gaussian(0.0), FaultSpec.none(), rng)
    np.testing.assert_array_equal(measurements.d, square_instance.edge_distances())
    np.testing.assert_array_equal(measurements.r, square_instance.link_distances())
    np.testing.assert_array_equal(measurements.d, exact_measurements(square_instance).d)


def test_gain_scales_true_distance(pair_instance):
    faults = FaultSpec(miscalibrated_node=1, gain=0.2)
    rng = np.random.default_rng(0)
    measurements = sample_measurements(pair_instance, NoiseModel.gaussian(0.0), faults, rng)
    assert measurements.d[0] == pytest.approx(20.0)
    assert measurements.r[1] == pytest.approx(20.0)
    assert measurements.r[0] == pytest.approx(100.0)


def test_outlier_node_corrupts_incident_measurements_only(pair_instance):
    faults = FaultSpec(outlier_node=0, outlier_probability=1.0, outlier_model=NoiseModel.laplace(4000.0))
    rng = np.random.default_rng(5)
    measurements = sample_measurements(pair_instance, NoiseModel.gaussian(0.0), faults, rng)
    assert measurements.r[1] == pytest.approx(100.0)
    assert measurements.d[0] != pytest.approx(100.0)
    assert measurements.r[0] != pytest.approx(100.0)


def test_outlier_probability_zero_matches_fault_free_streams(square_instance):
    regular = NoiseModel.gaussian(40.0)
    silent = FaultSpec(outlier_node=2, outlier_probability=0.0, outlier_model=NoiseModel.cauchy(100.0))
    baseline = sample_measurements(square_instance, regular, FaultSpec.none(), np.random.default_rng(11))
    quiet = sample_measurements(square_instance, regular, silent, np.random.default_rng(11))
    np.testing.assert_array_equal(baseline.d, quiet.d)
    np.testing.assert_array_equal(baseline.r, quiet.r)


def test_per_measurement_draw_is_supported(square_instance):
    faults = FaultSpec(
        outlier_node=0,
        outlier_probability=0.5,
        outlier_model=NoiseModel.laplace(1000.0),
        outlier_draw=OutlierDraw.MEASUREMENT,
    )
    rng = np.random.default_rng(3)
    measurements = sample_measurements(square_instance, NoiseModel.gaussian(1.0), faults, rng)
    assert np.all(measurements.d >= 0) and np.all(measurements.r >= 0)


def test_measurements_non_negative_under_heavy_noise(square_instance):
    rng = np.random.default_rng(1)
    for _ in range(20):
        measurements = sample_measurements(square_instance, NoiseModel.cauchy(500.0), FaultSpec.none(), rng)
        assert np.all(measurements.d >= 0) and np.all(measurements.r >= 0)


def test_same_seed_same_measurements(square_instance):
    faults = FaultSpec(outlier_node=1, outlier_probability=0.5, miscalibrated_node=3, gain=0.2)
    first = sample_measurements(square_instance, NoiseModel.gaussian(40.0), faults, np.random.default_rng(8))
    second = sample_measurements(square_instance, NoiseModel.gaussian(40.0), faults, np.random.default_rng(8))
    np.testing.assert_array_equal(first.d, second.d)
    np.testing.assert_array_equal(first.r, second.r)


def test_fault_node_outside_topology(square_instance):
    faults = FaultSpec(outlier_node=9, outlier_probability=1.0)
    with pytest.raises(ConfigurationError):
        sample_measurements(square_instance, NoiseModel.gaussian(1.0), faults, np.random.default_rng(0))


def test_fault_spec_invariants():
    with pytest.raises(ConfigurationError):
        FaultSpec(outlier_probability=1.5)
    with pytest.raises(ConfigurationError):
        FaultSpec(gain=0.0)


def test_measurements_shape_and_sign(square_instance):
    topology = square_instance.topology
    with pytest.raises(ShapeMismatchError):
        Measurements(topology, np.ones(3), np.ones(4))
    with pytest.raises(DomainError):
        Measurements(topology, -np.ones(5), np.ones(4))


def test_measurements_from_maps(square_instance):
    exact = exact_measurements(square_instance)
    rebuilt = Measurements.from_maps(square_instance.topology, exact.edge_ranges(), exact.link_ranges())
    np.testing.assert_array_equal(rebuilt.d, exact.d)
    with pytest.raises(ShapeMismatchError):
        Measurements.from_maps(square_instance.topology, {(0, 1): 1.0}, exact.link_ranges())


def _standard_error_check(samples, expected_mean, expected_std):
    se = expected_std / np.sqrt(samples.size)
    assert abs(samples.mean() - expected_mean) <= 3 * se


def test_gaussian_statistics():
    samples = sample_noise(NoiseModel.gaussian(40.0), np.random.default_rng(21), 100_000)
    _standard_error_check(samples, 0.0, 40.0)
    assert samples.std() == pytest.approx(40.0, rel=0.02)


def test_laplace_statistics():
    scale = 4000.0
    samples = sample_noise(NoiseModel.laplace(scale), np.random.default_rng(22), 100_000)
    _standard_error_check(samples, 0.0, np.sqrt(2) * scale)
    assert np.mean(np.abs(samples)) == pytest.approx(scale, rel=0.02)


def test_cauchy_median_and_iqr():
    scale = 100.0
    samples = sample_noise(NoiseModel.cauchy(scale), np.random.default_rng(23), 100_000)
    q1, median, q3 = np.percentile(samples, [25, 50, 75])
    assert abs(median) < 0.05 * scale
    assert (q3 - q1) == pytest.approx(2 * scale, rel=0.03)
