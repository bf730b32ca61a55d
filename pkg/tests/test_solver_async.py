"""
Tests for the asynchronous randomized block solver.
"""

import numpy as np
import pytest
from scipy.optimize import minimize

from robust_localization.core.robust_cost import HuberRadii, huber, lipschitz_constant, project_ball
from robust_localization.core.solver_async import (
    ActivationModel,
    AsyncConfig,
    AsyncState,
    EdgeWeight,
    async_solve,
    expected_improvement,
    local_solve,
    monitored_cost,
    sample_activation,
)
from robust_localization.core.solver_sync import SyncConfig, reference_fista_solve
from robust_localization.data.network import NetworkTopology
from robust_localization.data.noise_models import FaultSpec, Measurements, NoiseModel, sample_measurements
from robust_localization.errors import ConfigurationError


@pytest.fixture
def init_x(rng):
    return rng.uniform(0, 1000, size=(4, 2))


@pytest.fixture
def tangent_problem():
    """One neighbor at the origin (range 3), one anchor at (5, 0) (range 2)."""
    topology = NetworkTopology(n=2, m=1, edges=((0, 1),), anchor_links=((0, 0),))
    measurements = Measurements(topology, np.array([3.0]), np.array([2.0]))
    radii = HuberRadii(np.array([1.0]), np.array([1.0]))
    anchors = np.array([[5.0, 0.0]])
    return measurements, radii, anchors


def test_activation_frequencies():
    model = ActivationModel(np.array([0.5, 0.3, 0.2]), np.random.default_rng(4))
    draws = np.array([sample_activation(model) for _ in range(20_000)])
    frequencies = np.bincount(draws, minlength=3) / draws.size
    np.testing.assert_allclose(frequencies, [0.5, 0.3, 0.2], atol=0.015)


def test_activation_model_rejects_bad_probabilities():
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigurationError):
        ActivationModel(np.array([1.0, 0.0]), rng)
    with pytest.raises(ConfigurationError):
        ActivationModel(np.array([0.5, 0.2]), rng)


def test_single_node_always_activates():
    model = ActivationModel.uniform(1, np.random.default_rng(0))
    assert {sample_activation(model) for _ in range(50)} == {0}


def test_async_config_validation():
    with pytest.raises(ConfigurationError):
        AsyncConfig(num_activations=-1)
    with pytest.raises(ConfigurationError):
        AsyncConfig(max_inner_iters=0)
    with pytest.raises(ValueError):
        AsyncConfig(edge_weight="half")
    assert AsyncConfig(edge_weight="exact").edge_weight is EdgeWeight.EXACT


def test_local_solve_tangent_balls(tangent_problem):
    measurements, radii, anchors = tangent_problem
    solution = local_solve(
        0,
        {1: np.zeros(2)},
        anchors,
        measurements,
        radii,
        inner_tol=0.0,
        edge_weight="exact",
        max_inner_iters=5000,
    )
    np.testing.assert_allclose(solution.x, [3.0, 0.0], atol=1e-3)
    assert solution.cost == pytest.approx(0.0, abs=1e-6)
    assert np.linalg.norm(solution.y) <= 3.0 + 1e-12
    assert np.linalg.norm(solution.w) <= 2.0 + 1e-12


@pytest.mark.parametrize("edge_weight", list(EdgeWeight))
def test_local_solve_matches_reduced_cost_minimum(square_instance, noisy, edge_weight):
    radii = HuberRadii.uniform(square_instance.topology, 10.0)
    anchors = square_instance.anchor_positions
    neighbors = {j: square_instance.true_positions[j] for j in (1, 2, 3)}
    solution = local_solve(
        0, neighbors, anchors, noisy, radii, inner_tol=0.0, edge_weight=edge_weight, max_inner_iters=20_000
    )

    # the local problem with y and w minimized out, as a function of x alone
    topology = square_instance.topology
    incident = topology.incident_edges[0]
    d = noisy.d[[e for e, _, _ in incident]]
    xn = np.array([neighbors[j] for _, j, _ in incident])
    link_idx = list(topology.node_links[0])
    a = anchors[topology.link_array[link_idx, 1]]
    r = noisy.r[link_idx]
    c = EdgeWeight(edge_weight).weight

    def reduced(x):
        edge_part = np.maximum(np.linalg.norm(x - xn, axis=1) - d, 0.0)
        link_part = np.maximum(np.linalg.norm(x - a, axis=1) - r, 0.0)
        return c * np.sum(huber(10.0, edge_part)) + 0.5 * np.sum(huber(10.0, link_part))

    options = {"xatol": 1e-10, "fatol": 1e-12, "maxiter": 10_000}
    starts = (solution.x, square_instance.true_positions[0], xn.mean(axis=0))
    best = min(
        (minimize(reduced, start, method="Nelder-Mead", options=options) for start in starts),
        key=lambda res: res.fun,
    )
    assert solution.cost == pytest.approx(best.fun, rel=1e-3, abs=1e-3)
    assert reduced(solution.x) <= solution.cost + 1e-9


def test_single_inner_iteration_is_one_projected_step(square_instance, noisy, radii):
    anchors = square_instance.anchor_positions
    topology = square_instance.topology
    neighbors = {j: square_instance.true_positions[j] for j in (1, 2, 3)}
    x0 = np.array([400.0, 100.0])
    incident = topology.incident_edges[0]
    edge_idx = [e for e, _, _ in incident]
    xn = np.array([neighbors[j] for _, j, _ in incident])
    link_idx = list(topology.node_links[0])
    a = anchors[topology.link_array[link_idx, 1]]
    y0 = project_ball(x0 - xn, noisy.d[edge_idx])
    w0 = project_ball(x0 - a, noisy.r[link_idx])

    solution = local_solve(
        0, neighbors, anchors, noisy, radii, edge_weight="exact", warm_start=(x0, y0, w0), max_inner_iters=1
    )

    step = 1.0 / lipschitz_constant(topology)
    pd = project_ball(x0 - xn - y0, radii.D[edge_idx])
    pr = project_ball(x0 - a - w0, radii.R[link_idx])
    expected_x = x0 - step * (pd.sum(axis=0) + pr.sum(axis=0))
    assert solution.iterations == 1
    np.testing.assert_allclose(solution.x, expected_x, rtol=1e-12)
    np.testing.assert_allclose(solution.y, project_ball(y0 + step * pd, noisy.d[edge_idx]), rtol=1e-12)


def test_zero_activations_returns_initialization(square_instance, noisy, radii, init_x):
    model = ActivationModel.uniform(4, np.random.default_rng(0))
    config = AsyncConfig(num_activations=0)
    result = async_solve(noisy, radii, square_instance.anchor_positions, init_x, model, config)
    np.testing.assert_array_equal(result.x_hat, init_x)
    assert result.broadcast_count == 0
    assert len(result.rows) == 1
    assert result.rows[0]["awakened_node"] == -1


def test_one_broadcast_per_activation(square_instance, noisy, radii, init_x):
    model = ActivationModel.uniform(4, np.random.default_rng(1))
    config = AsyncConfig(num_activations=25, inner_tol=1e-7, max_inner_iters=300)
    result = async_solve(noisy, radii, square_instance.anchor_positions, init_x, model, config)
    assert result.broadcast_count == 25
    assert [row["broadcast_count"] for row in result.rows] == list(range(26))
    assert all(0 <= row["awakened_node"] < 4 for row in result.rows[1:])


def test_activation_touches_only_its_own_block(square_instance, noisy, radii, init_x):
    anchors = square_instance.anchor_positions
    model = ActivationModel.uniform(4, np.random.default_rng(2))
    config = AsyncConfig(num_activations=1, inner_tol=1e-7, max_inner_iters=300)
    result = async_solve(noisy, radii, anchors, init_x, model, config)
    before = AsyncState.initial(init_x, noisy, anchors)
    after = result.state
    node = result.rows[1]["awakened_node"]
    topology = square_instance.topology

    others = [j for j in range(4) if j != node]
    np.testing.assert_array_equal(after.x[others], before.x[others])
    for e, (i, j) in enumerate(topology.edges):
        if node not in (i, j):
            np.testing.assert_array_equal(after.y_copies[e], before.y_copies[e])
        else:
            # the neighbor's copy is untouched
            other_side = 1 if node == i else 0
            np.testing.assert_array_equal(after.y_copies[e, other_side], before.y_copies[e, other_side])
    for idx, (i, _) in enumerate(topology.anchor_links):
        if i != node:
            np.testing.assert_array_equal(after.w[idx], before.w[idx])
    for j in topology.neighbors(node):
        np.testing.assert_array_equal(after.heard[j][node], after.x[node])


def test_monitored_cost_equals_f_when_copies_agree(square_instance, noisy, radii, init_x):
    anchors = square_instance.anchor_positions
    state = AsyncState.initial(init_x, noisy, anchors)
    duplicated = monitored_cost(state, noisy, radii, anchors, EdgeWeight.DUPLICATED)
    exact = monitored_cost(state, noisy, radii, anchors, EdgeWeight.EXACT)
    assert duplicated == pytest.approx(exact, rel=1e-12)


def test_exact_weighting_never_increases_cost(square_instance, noisy, radii, init_x):
    inner_tol = 1e-9
    model = ActivationModel.uniform(4, np.random.default_rng(3))
    config = AsyncConfig(num_activations=200, inner_tol=inner_tol, max_inner_iters=500, edge_weight="exact")
    result = async_solve(noisy, radii, square_instance.anchor_positions, init_x, model, config)
    costs = result.costs
    for previous, current in zip(costs, costs[1:]):
        assert current <= previous + 10 * inner_tol * (1 + previous)
    assert costs[-1] < costs[0]


def test_expected_improvement_is_non_negative(square_instance, noisy, radii, init_x):
    model = ActivationModel.uniform(4, np.random.default_rng(5))
    config = AsyncConfig(
        num_activations=30, inner_tol=1e-9, max_inner_iters=300, edge_weight="exact", phi_every=10
    )
    result = async_solve(noisy, radii, square_instance.anchor_positions, init_x, model, config)
    phis = [row["phi"] for row in result.rows if not np.isnan(row["phi"])]
    assert len(phis) == 4
    assert all(phi >= -1e-9 * (1 + row["F_tilde"]) for phi, row in zip(phis, result.rows[::10]))


def test_expected_improvement_vanishes_at_optimum(square_instance, noiseless, radii):
    anchors = square_instance.anchor_positions
    state = AsyncState.initial(square_instance.true_positions, noiseless, anchors)
    model = ActivationModel.uniform(4, np.random.default_rng(0))
    assert expected_improvement(state, model, noiseless, radii, anchors) == pytest.approx(0.0, abs=1e-12)


def test_activation_model_must_cover_topology(square_instance, noisy, radii, init_x):
    model = ActivationModel.uniform(3, np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        async_solve(noisy, radii, square_instance.anchor_positions, init_x, model)


def test_callback_sees_every_activation(square_instance, noisy, radii, init_x):
    seen = []
    model = ActivationModel.uniform(4, np.random.default_rng(6))
    config = AsyncConfig(num_activations=12, inner_tol=1e-6, max_inner_iters=100)
    anchors = square_instance.anchor_positions
    async_solve(noisy, radii, anchors, init_x, model, config, callback=lambda t, x: seen.append(t))
    assert seen == list(range(1, 13))


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(20))
def test_exact_weighting_approaches_synchronous_optimum(square_instance, radii, seed):
    anchors = square_instance.anchor_positions
    rng = np.random.default_rng(seed)
    measurements = sample_measurements(square_instance, NoiseModel.gaussian(20.0), FaultSpec.none(), rng)
    init_x = rng.uniform(0, 1000, size=(4, 2))
    reference = reference_fista_solve(
        measurements, radii, anchors, init_x, SyncConfig(max_iters=20000, stop_tol=0.0)
    )
    f_star = reference.costs[-1]

    model = ActivationModel.uniform(4, np.random.default_rng(100 + seed))
    config = AsyncConfig(num_activations=3000, inner_tol=1e-10, max_inner_iters=2000, edge_weight="exact")
    result = async_solve(measurements, radii, anchors, init_x, model, config)
    assert result.costs[-1] >= f_star - 1e-6 * (1 + f_star)
    assert result.costs[-1] <= f_star + 1e-3 * (1 + f_star)

