"""
Network topology, ground-truth geometry and incidence structure.
"""

import itertools
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from scipy.spatial.distance import cdist

from ..errors import GenerationError, ShapeMismatchError, TopologyError

logger = logging.getLogger(__name__)

Edge = Tuple[int, int]

DEFAULT_MAX_RETRIES = 1000


@dataclass(frozen=True)
class NetworkTopology:
    """
    Measurement graph between sensors plus sensor-anchor links.

    Edges are stored as ``(i, j)`` with ``i < j``; anchor links as
    ``(sensor, anchor)``. All ids are 0-based.
    """

    n: int
    m: int
    edges: Tuple[Edge, ...]
    anchor_links: Tuple[Edge, ...]
    p: int = 2

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple((int(i), int(j)) for i, j in self.edges))
        object.__setattr__(
            self, "anchor_links", tuple((int(i), int(k)) for i, k in self.anchor_links)
        )
        self._check_structure()

    def _check_structure(self):
        if self.n < 1:
            raise TopologyError(f"sensor count must be positive, got {self.n}")
        if self.m < 0:
            raise TopologyError(f"anchor count must be non-negative, got {self.m}")
        if self.p < 1:
            raise TopologyError(f"dimension must be positive, got {self.p}")

        seen = set()
        for i, j in self.edges:
            if i == j:
                raise TopologyError(f"self-edge at sensor {i}")
            if i > j:
                raise TopologyError(f"edge ({i}, {j}) must be oriented with i < j")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise TopologyError(f"edge ({i}, {j}) references unknown sensor")
            if (i, j) in seen:
                raise TopologyError(f"duplicate edge ({i}, {j})")
            seen.add((i, j))

        seen = set()
        for i, k in self.anchor_links:
            if not 0 <= i < self.n:
                raise TopologyError(f"anchor link ({i}, {k}) references unknown sensor")
            if not 0 <= k < self.m:
                raise TopologyError(f"anchor link ({i}, {k}) references unknown anchor")
            if (i, k) in seen:
                raise TopologyError(f"duplicate anchor link ({i}, {k})")
            seen.add((i, k))

    def validate(self) -> None:
        """
        Check that the graph is connected and at least one sensor measures an anchor.

        Raises:
            TopologyError: naming the failed predicate
        """
        if not self.anchor_links:
            raise TopologyError("has_anchor_link: no sensor measures an anchor")
        if not self.is_connected():
            raise TopologyError("connected: measurement graph is not connected")

    def failed_predicate(self) -> Optional[str]:
        """Return the name of the first violated localizability predicate, if any."""
        if not self.is_connected():
            return "connected"
        if not self.anchor_links:
            return "has_anchor_link"
        return None

    def is_connected(self) -> bool:
        return nx.is_connected(self.to_graph())

    def to_graph(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(self.n))
        graph.add_edges_from(self.edges)
        return graph

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_links(self) -> int:
        return len(self.anchor_links)

    @cached_property
    def edge_array(self) -> np.ndarray:
        return np.array(self.edges, dtype=int).reshape(-1, 2)

    @cached_property
    def link_array(self) -> np.ndarray:
        return np.array(self.anchor_links, dtype=int).reshape(-1, 2)

    @cached_property
    def incident_edges(self) -> Tuple[Tuple[Tuple[int, int, float], ...], ...]:
        """Per sensor: ``(edge index, neighbor, incidence sign)`` in edge order."""
        per_node: List[List[Tuple[int, int, float]]] = [[] for _ in range(self.n)]
        for e, (i, j) in enumerate(self.edges):
            per_node[i].append((e, j, 1.0))
            per_node[j].append((e, i, -1.0))
        return tuple(tuple(entries) for entries in per_node)

    @cached_property
    def node_links(self) -> Tuple[Tuple[int, ...], ...]:
        """Per sensor: indices into ``anchor_links``."""
        per_node: List[List[int]] = [[] for _ in range(self.n)]
        for idx, (i, _) in enumerate(self.anchor_links):
            per_node[i].append(idx)
        return tuple(tuple(entries) for entries in per_node)

    def neighbors(self, i: int) -> List[int]:
        return [j for _, j, _ in self.incident_edges[i]]

    def anchor_links_of(self, i: int) -> List[int]:
        """Anchor ids measured by sensor ``i``."""
        return [self.anchor_links[idx][1] for idx in self.node_links[i]]

    def degrees(self) -> np.ndarray:
        return np.array([len(entries) for entries in self.incident_edges], dtype=int)

    def anchor_counts(self) -> np.ndarray:
        return np.array([len(entries) for entries in self.node_links], dtype=int)


@dataclass(frozen=True)
class NetworkInstance:
    """Topology plus ground-truth sensor and anchor coordinates (meters)."""

    topology: NetworkTopology
    true_positions: np.ndarray
    anchor_positions: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        positions = np.array(self.true_positions, dtype=float).reshape(-1, self.topology.p)
        anchors = np.array(self.anchor_positions, dtype=float).reshape(-1, self.topology.p)
        if positions.shape != (self.topology.n, self.topology.p):
            raise ShapeMismatchError(
                f"expected {self.topology.n} sensor positions in R^{self.topology.p}, "
                f"got shape {positions.shape}"
            )
        if anchors.shape != (self.topology.m, self.topology.p):
            raise ShapeMismatchError(
                f"expected {self.topology.m} anchor positions in R^{self.topology.p}, "
                f"got shape {anchors.shape}"
            )
        positions.setflags(write=False)
        anchors.setflags(write=False)
        object.__setattr__(self, "true_positions", positions)
        object.__setattr__(self, "anchor_positions", anchors)

    def edge_distances(self) -> np.ndarray:
        edges = self.topology.edge_array
        diff = self.true_positions[edges[:, 0]] - self.true_positions[edges[:, 1]]
        return np.linalg.norm(diff, axis=1)

    def link_distances(self) -> np.ndarray:
        links = self.topology.link_array
        diff = self.true_positions[links[:, 0]] - self.anchor_positions[links[:, 1]]
        return np.linalg.norm(diff, axis=1)


def incidence_matrix(topology: NetworkTopology) -> np.ndarray:
    """
    Signed arc-node incidence table C, shape ``(|E|, n)``.

    Row for edge ``(i, j)`` holds +1 at column i and -1 at column j.
    """
    C = np.zeros((topology.num_edges, topology.n))
    if topology.num_edges:
        rows = np.arange(topology.num_edges)
        C[rows, topology.edge_array[:, 0]] = 1.0
        C[rows, topology.edge_array[:, 1]] = -1.0
    return C


def anchor_selection_matrix(topology: NetworkTopology) -> np.ndarray:
    """Node-anchor-link table M, shape ``(|links|, n)``, with a 1 at the link's sensor."""
    M = np.zeros((topology.num_links, topology.n))
    if topology.num_links:
        M[np.arange(topology.num_links), topology.link_array[:, 0]] = 1.0
    return M


def laplacian(topology: NetworkTopology) -> np.ndarray:
    C = incidence_matrix(topology)
    return C.T @ C


def max_degree(topology: NetworkTopology) -> int:
    return int(topology.degrees().max(initial=0))


def max_anchor_links(topology: NetworkTopology) -> int:
    return int(topology.anchor_counts().max(initial=0))


def mean_degree(topology: NetworkTopology) -> float:
    return 2.0 * topology.num_edges / topology.n


def corner_positions(side_length: float, p: int) -> np.ndarray:
    """Vertices of the deployment square (p=2) or cube (p=3)."""
    return np.array(list(itertools.product((0.0, side_length), repeat=p)), dtype=float)


def build_topology(positions: np.ndarray, anchors: np.ndarray, comm_radius: float) -> NetworkTopology:
    """Connect every pair (sensor or anchor) within ``comm_radius``."""
    positions = np.asarray(positions, dtype=float)
    anchors = np.asarray(anchors, dtype=float)
    n, p = positions.shape

    sensor_dist = cdist(positions, positions)
    ii, jj = np.nonzero(np.triu(sensor_dist <= comm_radius, k=1))
    edges = list(zip(ii.tolist(), jj.tolist()))

    anchor_dist = cdist(positions, anchors)
    si, ak = np.nonzero(anchor_dist <= comm_radius)
    links = list(zip(si.tolist(), ak.tolist()))

    return NetworkTopology(n=n, m=anchors.shape[0], edges=tuple(edges), anchor_links=tuple(links), p=p)


def generate_geometric_network(
    n: int,
    m: int,
    side_length: float,
    comm_radius: float,
    p: int,
    rng: np.random.Generator,
    max_retries: int = DEFAULT_MAX_RETRIES,
    seed: Optional[int] = None,
    mean_degree_range: Optional[Tuple[float, float]] = None,
) -> NetworkInstance:
    """
    Sample a random connected geometric network with at least one anchor link.

    Sensors are uniform in ``[0, side_length]^p``. Anchors sit at the corners
    when ``m == 2**p``, otherwise they are uniform as well. Sensors and
    anchors within ``comm_radius`` are linked. Invalid draws are resampled.
    With ``mean_degree_range`` set, draws whose mean degree falls outside
    the closed range are resampled too.

    Args:
        n: Sensor count
        m: Anchor count
        side_length: Side of the deployment square/cube (meters)
        comm_radius: Communication radius (meters)
        p: Ambient dimension
        rng: Random generator
        max_retries: Resample limit
        seed: Seed recorded in the instance for replay
        mean_degree_range: Accepted (low, high) mean sensor degree

    Returns:
        A validated NetworkInstance

    Raises:
        TopologyError: invalid generation parameters
        GenerationError: retry limit exhausted
    """
    if n < 1 or m < 1:
        raise TopologyError(f"need n >= 1 and m >= 1, got n={n}, m={m}")
    if side_length <= 0 or comm_radius <= 0:
        raise TopologyError("side_length and comm_radius must be positive")
    if mean_degree_range is not None and mean_degree_range[0] > mean_degree_range[1]:
        raise TopologyError(f"empty mean degree range {tuple(mean_degree_range)}")

    corners = m == 2 ** p
    failed = "connected"
    for attempt in range(1, max_retries + 1):
        positions = rng.uniform(0.0, side_length, size=(n, p))
        anchors = corner_positions(side_length, p) if corners else rng.uniform(0.0, side_length, size=(m, p))
        topology = build_topology(positions, anchors, comm_radius)

        predicate = topology.failed_predicate()
        if predicate is None and mean_degree_range is not None:
            low, high = mean_degree_range
            if not low <= mean_degree(topology) <= high:
                predicate = "mean_degree"
        if predicate is None:
            logger.info(
                f"Generated network after {attempt} attempt(s): n={n}, m={m}, "
                f"|E|={topology.num_edges}, links={topology.num_links}, "
                f"mean degree={mean_degree(topology):.2f}"
            )
            return NetworkInstance(topology, positions, anchors, seed=seed)
        failed = predicate

    raise GenerationError(failed, max_retries)


def edges_from_pairs(pairs: Sequence[Sequence[int]]) -> Tuple[Edge, ...]:
    """Normalize arbitrary sensor pairs to ``i < j`` orientation."""
    return tuple((min(int(a), int(b)), max(int(a), int(b))) for a, b in pairs)
