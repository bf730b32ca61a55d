"""
Tests for network topology, instances and generation.
"""

import numpy as np
import pytest

from robust_localization.data.network import (
    NetworkInstance,
    NetworkTopology,
    anchor_selection_matrix,
    build_topology,
    generate_geometric_network,
    incidence_matrix,
    laplacian,
    max_anchor_links,
    max_degree,
    mean_degree,
)
from robust_localization.errors import GenerationError, ShapeMismatchError, TopologyError


def test_incidence_single_edge():
    topology = NetworkTopology(n=2, m=1, edges=((0, 1),), anchor_links=((0, 0),))
    np.testing.assert_array_equal(incidence_matrix(topology), [[1.0, -1.0]])


def test_incidence_path():
    topology = NetworkTopology(n=3, m=1, edges=((0, 1), (1, 2)), anchor_links=((0, 0),))
    np.testing.assert_array_equal(incidence_matrix(topology), [[1, -1, 0], [0, 1, -1]])


def test_incidence_empty_edges():
    topology = NetworkTopology(n=1, m=1, edges=(), anchor_links=((0, 0),))
    assert incidence_matrix(topology).shape == (0, 1)


def test_incidence_rows_sum_to_zero(square_instance):
    C = incidence_matrix(square_instance.topology)
    np.testing.assert_array_equal(C.sum(axis=1), np.zeros(C.shape[0]))


def test_laplacian_spectrum_bounded_by_twice_max_degree():
    rng = np.random.default_rng(3)
    for _ in range(20):
        positions = rng.uniform(0, 1000, size=(12, 2))
        topology = build_topology(positions, np.zeros((1, 2)), 500.0)
        eigenvalues = np.linalg.eigvalsh(laplacian(topology))
        assert eigenvalues.max() <= 2 * max_degree(topology) + 1e-9


def test_max_degree_star():
    topology = NetworkTopology(
        n=5, m=1, edges=((0, 1), (0, 2), (0, 3), (0, 4)), anchor_links=((1, 0),)
    )
    assert max_degree(topology) == 4


def test_max_anchor_links():
    one_each = NetworkTopology(n=3, m=3, edges=((0, 1), (1, 2)), anchor_links=((0, 0), (1, 1), (2, 2)))
    assert max_anchor_links(one_each) == 1

    two_on_one = NetworkTopology(n=3, m=2, edges=((0, 1), (1, 2)), anchor_links=((1, 0), (1, 1)))
    assert max_anchor_links(two_on_one) == 2


def test_anchor_selection_matrix(square_instance):
    M = anchor_selection_matrix(square_instance.topology)
    assert M.shape == (4, 4)
    np.testing.assert_array_equal(M.sum(axis=1), np.ones(4))
    assert M[1, 1] == 1.0


def test_per_node_views(square_instance):
    topology = square_instance.topology
    assert topology.neighbors(0) == [1, 2, 3]
    assert topology.anchor_links_of(3) == [1]
    np.testing.assert_array_equal(topology.degrees(), [3, 2, 3, 2])
    assert mean_degree(topology) == pytest.approx(2.5)


@pytest.mark.parametrize(
    "edges, links",
    [
        (((0, 0),), ((0, 0),)),
        (((1, 0),), ((0, 0),)),
        (((0, 1), (0, 1)), ((0, 0),)),
        (((0, 5),), ((0, 0),)),
        (((0, 1),), ((0, 3),)),
        (((0, 1),), ((0, 0), (0, 0))),
    ],
)
def test_topology_rejects_malformed_structure(edges, links):
    with pytest.raises(TopologyError):
        NetworkTopology(n=2, m=1, edges=edges, anchor_links=links)


def test_validate_names_failed_predicate():
    no_anchor = NetworkTopology(n=2, m=1, edges=((0, 1),), anchor_links=())
    with pytest.raises(TopologyError, match="has_anchor_link"):
        no_anchor.validate()

    disconnected = NetworkTopology(n=3, m=1, edges=((0, 1),), anchor_links=((0, 0),))
    with pytest.raises(TopologyError, match="connected"):
        disconnected.validate()


def test_instance_shape_checked(square_instance):
    with pytest.raises(ShapeMismatchError):
        NetworkInstance(square_instance.topology, np.zeros((3, 2)), square_instance.anchor_positions)


def test_instance_arrays_are_read_only(square_instance):
    with pytest.raises(ValueError):
        square_instance.true_positions[0, 0] = 1.0


def test_generate_ten_sensor_network():
    instance = generate_geometric_network(10, 4, 1000.0, 480.0, 2, np.random.default_rng(2024))
    topology = instance.topology
    topology.validate()
    assert topology.n == 10 and topology.m == 4
    # corner anchors
    assert {tuple(a) for a in instance.anchor_positions} == {(0, 0), (0, 1000), (1000, 0), (1000, 1000)}
    assert topology.num_edges > 0
    distances = instance.edge_distances()
    assert np.all(distances <= 480.0)


def test_ten_sensor_mean_degree_over_seeds():
    degrees = [
        mean_degree(generate_geometric_network(10, 4, 1000.0, 480.0, 2, np.random.default_rng(seed)).topology)
        for seed in range(300)
    ]
    assert np.mean(degrees) == pytest.approx(4.3, abs=0.25)


def test_generate_within_mean_degree_range():
    for seed in range(5):
        instance = generate_geometric_network(
            10, 4, 1000.0, 480.0, 2, np.random.default_rng(seed), mean_degree_range=(4.0, 4.6)
        )
        assert 4.0 <= mean_degree(instance.topology) <= 4.6


def test_generate_unreachable_mean_degree_names_predicate():
    with pytest.raises(GenerationError) as info:
        generate_geometric_network(
            4, 4, 1000.0, 5000.0, 2, np.random.default_rng(0), max_retries=5, mean_degree_range=(0.0, 1.0)
        )
    assert info.value.predicate == "mean_degree"


def test_generate_smallest_valid_instance():
    instance = generate_geometric_network(1, 1, 1.0, 10.0, 2, np.random.default_rng(0))
    assert instance.topology.num_edges == 0
    assert instance.topology.anchor_links == ((0, 0),)


def test_generate_fails_when_disconnected():
    with pytest.raises(GenerationError) as info:
        generate_geometric_network(3, 1, 1000.0, 1e-6, 2, np.random.default_rng(0), max_retries=20)
    assert info.value.predicate == "connected"
    assert info.value.attempts == 20


def test_generate_is_reproducible():
    first = generate_geometric_network(10, 4, 1000.0, 450.0, 2, np.random.default_rng(99))
    second = generate_geometric_network(10, 4, 1000.0, 450.0, 2, np.random.default_rng(99))
    np.testing.assert_array_equal(first.true_positions, second.true_positions)
    assert first.topology == second.topology


def test_generate_rejects_bad_parameters():
    with pytest.raises(TopologyError):
        generate_geometric_network(0, 4, 1000.0, 450.0, 2, np.random.default_rng(0))
    with pytest.raises(TopologyError):
        generate_geometric_network(4, 4, 1000.0, -1.0, 2, np.random.default_rng(0))
    with pytest.raises(TopologyError):
        generate_geometric_network(
            4, 4, 1000.0, 450.0, 2, np.random.default_rng(0), mean_degree_range=(5.0, 4.0)
        )
