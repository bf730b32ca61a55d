"""
Synchronous distributed solver over simulated broadcast rounds, plus a
centralized matrix-form reference implementation of the same iteration.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
from scipy import sparse

from ..data.network import NetworkTopology, anchor_selection_matrix, incidence_matrix
from ..data.noise_models import Measurements
from ..errors import ConfigurationError, DivergenceError, LocalizationError
from .robust_cost import (
    HuberRadii,
    StackedPoint,
    lipschitz_constant,
    project_ball,
    psi,
    stacked_cost,
)

logger = logging.getLogger(__name__)

IterationCallback = Callable[[int, np.ndarray], None]


@dataclass
class SyncConfig:
    """
    Stopping and step-size settings shared by both synchronous solvers.

    ``max_iters = 0`` returns the initialization unchanged.
    """

    max_iters: int = 5000
    stop_tol: float = 1e-7
    lipschitz_override: Optional[float] = None
    debug_checks: bool = False

    def __post_init__(self):
        if self.max_iters < 0:
            raise ConfigurationError(f"max_iters must be >= 0, got {self.max_iters}")
        if self.stop_tol < 0:
            raise ConfigurationError(f"stop_tol must be >= 0, got {self.stop_tol}")
        if self.lipschitz_override is not None and self.lipschitz_override <= 0:
            raise ConfigurationError("lipschitz_override must be positive")


@dataclass
class SyncResult:
    x_hat: np.ndarray
    z_hat: StackedPoint
    costs: List[float]
    max_changes: List[float]
    iterations: int
    broadcast_count: int
    converged: bool
    lipschitz: float

    def trajectory_rows(self) -> List[Dict[str, float]]:
        """Rows ``(iter, F, max_x_change, broadcast_count)``; broadcasts are cumulative."""
        n = self.x_hat.shape[0]
        return [
            {"iter": t, "F": cost, "max_x_change": change, "broadcast_count": n * t}
            for t, (cost, change) in enumerate(zip(self.costs, self.max_changes))
        ]


@dataclass
class ReferenceResult:
    z_hat: StackedPoint
    costs: List[float]
    iterations: int
    converged: bool
    lipschitz: float

    @property
    def x_hat(self) -> np.ndarray:
        return self.z_hat.x


def extrapolation_coefficient(t: int) -> float:
    return (t - 2.0) / (t + 1.0)


class NodeState:
    """
    Private state of one sensor.

    The node sees only its own position history, its copies of the incident
    edge variables (oriented as ``x_i - x_j - y_ij``), its anchor-link
    variables, its own measurement data and the messages in its inbox.
    """

    def __init__(
        self,
        node_id: int,
        x0: np.ndarray,
        neighbors: Sequence[int],
        y0: np.ndarray,
        edge_ranges: np.ndarray,
        edge_radii: np.ndarray,
        anchors: np.ndarray,
        w0: np.ndarray,
        link_ranges: np.ndarray,
        link_radii: np.ndarray,
    ):
        self.node_id = node_id
        self.neighbors = list(neighbors)
        self.x_cur = np.array(x0, dtype=float)
        self.x_prev = self.x_cur.copy()
        self.y_cur = np.array(y0, dtype=float)
        self.y_prev = self.y_cur.copy()
        self.w_cur = np.array(w0, dtype=float)
        self.w_prev = self.w_cur.copy()
        self.edge_ranges = edge_ranges
        self.edge_radii = edge_radii
        self.anchors = anchors
        self.link_ranges = link_ranges
        self.link_radii = link_radii

        self.inbox: Dict[int, np.ndarray] = {}
        self.reads: Set[int] = set()
        self.xi: Optional[np.ndarray] = None

    def extrapolate(self, t: int) -> np.ndarray:
        """Nesterov point ``xi_i``; this is what the node broadcasts."""
        beta = extrapolation_coefficient(t)
        self.xi = self.x_cur + beta * (self.x_cur - self.x_prev)
        return self.xi

    def receive(self, sender: int, message: np.ndarray) -> None:
        self.inbox[sender] = message

    def _read(self, sender: int) -> np.ndarray:
        if sender not in self.inbox:
            raise LocalizationError(f"node {self.node_id} has no message from {sender}")
        self.reads.add(sender)
        return self.inbox[sender]

    def update(self, t: int, step: float) -> None:
        """One iteration of the per-node update, consuming the inbox."""
        if self.xi is None:
            raise LocalizationError(f"node {self.node_id} updated before extrapolating")
        beta = extrapolation_coefficient(t)
        p = self.x_cur.shape[0]
        self.reads.clear()
        xi_nbrs = np.array([self._read(j) for j in self.neighbors], dtype=float).reshape(-1, p)

        upsilon = self.y_cur + beta * (self.y_cur - self.y_prev)
        pd = project_ball(self.xi - xi_nbrs - upsilon, self.edge_radii)
        y_new = project_ball(upsilon + step * pd, self.edge_ranges)

        omega = self.w_cur + beta * (self.w_cur - self.w_prev)
        pr = project_ball(self.xi - self.anchors - omega, self.link_radii)
        w_new = project_ball(omega + step * pr, self.link_ranges)

        grad = pd.sum(axis=0) + pr.sum(axis=0)
        x_new = self.xi - step * grad

        self.x_prev, self.x_cur = self.x_cur, x_new
        self.y_prev, self.y_cur = self.y_cur, y_new
        self.w_prev, self.w_cur = self.w_cur, w_new
        self.inbox.clear()


class BroadcastNetwork:
    """Delivers each node's broadcast to its neighbors' inboxes."""

    def __init__(self, topology: NetworkTopology):
        self.topology = topology
        self.broadcast_count = 0

    def deliver(self, nodes: Sequence[NodeState], messages: Dict[int, np.ndarray]) -> None:
        for sender, message in messages.items():
            for receiver in self.topology.neighbors(sender):
                nodes[receiver].receive(sender, message.copy())
            self.broadcast_count += 1

    def check_locality(self, nodes: Sequence[NodeState]) -> None:
        for node in nodes:
            allowed = set(self.topology.neighbors(node.node_id))
            if not node.reads <= allowed:
                raise LocalizationError(
                    f"node {node.node_id} read from non-neighbors {sorted(node.reads - allowed)}"
                )


def build_nodes(
    z0: StackedPoint, measurements: Measurements, radii: HuberRadii, anchors: np.ndarray
) -> List[NodeState]:
    """Split a stacked point into per-node private states."""
    topology = measurements.topology
    anchors = np.asarray(anchors, dtype=float)
    nodes = []
    for i in range(topology.n):
        incident = topology.incident_edges[i]
        edge_idx = [e for e, _, _ in incident]
        signs = np.array([s for _, _, s in incident]).reshape(-1, 1)
        link_idx = list(topology.node_links[i])
        nodes.append(
            NodeState(
                node_id=i,
                x0=z0.x[i],
                neighbors=[j for _, j, _ in incident],
                y0=(signs * z0.y[edge_idx]).reshape(-1, topology.p),
                edge_ranges=measurements.d[edge_idx],
                edge_radii=radii.D[edge_idx],
                anchors=anchors[topology.link_array[link_idx, 1]].reshape(-1, topology.p),
                w0=z0.w[link_idx].reshape(-1, topology.p),
                link_ranges=measurements.r[link_idx],
                link_radii=radii.R[link_idx],
            )
        )
    return nodes


def assemble_point(nodes: Sequence[NodeState], topology: NetworkTopology) -> StackedPoint:
    """Stacked point with each y taken from its lower endpoint's copy."""
    x = np.array([node.x_cur for node in nodes])
    y = np.zeros((topology.num_edges, topology.p))
    w = np.zeros((topology.num_links, topology.p))
    for i, node in enumerate(nodes):
        for slot, (e, _, sign) in enumerate(topology.incident_edges[i]):
            if sign > 0:
                y[e] = node.y_cur[slot]
        for slot, idx in enumerate(topology.node_links[i]):
            w[idx] = node.w_cur[slot]
    return StackedPoint(x, y, w)


def _check_edge_copies(nodes: Sequence[NodeState], topology: NetworkTopology) -> None:
    copies: Dict[int, List[np.ndarray]] = {}
    for i, node in enumerate(nodes):
        for slot, (e, _, sign) in enumerate(topology.incident_edges[i]):
            copies.setdefault(e, []).append(sign * node.y_cur[slot])
    for e, (first, second) in copies.items():
        if np.max(np.abs(first - second)) > 1e-9 * (1.0 + np.linalg.norm(first)):
            raise LocalizationError(f"endpoint copies of edge {topology.edges[e]} disagree")


def _max_relative_change(x_new: np.ndarray, x_old: np.ndarray) -> float:
    change = np.linalg.norm(x_new - x_old, axis=1) / (1.0 + np.linalg.norm(x_new, axis=1))
    return float(change.max(initial=0.0))


def strong_solve(
    measurements: Measurements,
    radii: HuberRadii,
    anchors: np.ndarray,
    init_x: np.ndarray,
    config: Optional[SyncConfig] = None,
    callback: Optional[IterationCallback] = None,
) -> SyncResult:
    """
    Run the synchronous distributed method.

    Every round each node extrapolates, broadcasts ``xi_i``, and after the
    delivery phase updates its position, edge and anchor variables from its
    inbox with step ``1/L_F``.

    Args:
        measurements: Ranges (carries the topology)
        radii: Huber radii
        anchors: Anchor coordinates, shape ``(m, p)``
        init_x: Initial positions, shape ``(n, p)``
        config: Stopping and step settings
        callback: Called as ``callback(t, x)`` after every round

    Returns:
        SyncResult with the estimate, F trajectory and broadcast count

    Raises:
        DivergenceError: non-finite iterate
    """
    config = config or SyncConfig()
    topology = measurements.topology
    radii.check_against(topology)
    lipschitz = config.lipschitz_override or lipschitz_constant(topology)
    step = 1.0 / lipschitz
    logger.info(f"Synchronous solve: n={topology.n}, |E|={topology.num_edges}, L_F={lipschitz:g}")

    z = StackedPoint.from_positions(init_x, measurements, anchors)
    nodes = build_nodes(z, measurements, radii, anchors)
    network = BroadcastNetwork(topology)
    costs = [stacked_cost(z, measurements, radii, anchors)]
    changes = [float("nan")]
    converged = False

    t = 0
    for t in range(1, config.max_iters + 1):
        x_old = z.x
        messages = {node.node_id: node.extrapolate(t) for node in nodes}
        network.deliver(nodes, messages)
        for node in nodes:
            node.update(t, step)

        z = assemble_point(nodes, topology)
        if not (np.all(np.isfinite(z.x)) and np.all(np.isfinite(z.y)) and np.all(np.isfinite(z.w))):
            raise DivergenceError(t)
        if config.debug_checks:
            network.check_locality(nodes)
            _check_edge_copies(nodes, topology)

        change = _max_relative_change(z.x, x_old)
        costs.append(stacked_cost(z, measurements, radii, anchors, check_feasible=config.debug_checks))
        changes.append(change)
        if callback:
            callback(t, z.x)
        if change < config.stop_tol:
            converged = True
            break

    logger.info(
        f"Synchronous solve finished after {t} iteration(s), F={costs[-1]:.6g}, converged={converged}"
    )
    return SyncResult(
        x_hat=z.x,
        z_hat=z,
        costs=costs,
        max_changes=changes,
        iterations=t,
        broadcast_count=network.broadcast_count,
        converged=converged,
        lipschitz=lipschitz,
    )


def stacked_operators(topology: NetworkTopology) -> Tuple[sparse.csr_matrix, sparse.csr_matrix]:
    """``B = [C (x) I, -I, 0]`` and ``E = [M (x) I, 0, -I]`` as sparse matrices."""
    p = topology.p
    eye_p = sparse.identity(p, format="csr")
    A = sparse.kron(sparse.csr_matrix(incidence_matrix(topology)), eye_p)
    M = sparse.kron(sparse.csr_matrix(anchor_selection_matrix(topology)), eye_p)
    ny, nw = topology.num_edges * p, topology.num_links * p
    B = sparse.hstack([A, -sparse.identity(ny), sparse.csr_matrix((ny, nw))]).tocsr()
    E = sparse.hstack([M, sparse.csr_matrix((nw, ny)), -sparse.identity(nw)]).tocsr()
    return B, E


def reference_fista_solve(
    measurements: Measurements,
    radii: HuberRadii,
    anchors: np.ndarray,
    init_x: np.ndarray,
    config: Optional[SyncConfig] = None,
    callback: Optional[IterationCallback] = None,
) -> ReferenceResult:
    """
    Centralized FISTA on F plus the indicator of Z, in matrix form.

    Uses the same extrapolation ``(t-2)/(t+1)``, step ``1/L_F`` and stopping
    rule as :func:`strong_solve`, so both produce the same iterates.
    """
    config = config or SyncConfig()
    topology = measurements.topology
    radii.check_against(topology)
    p = topology.p
    lipschitz = config.lipschitz_override or lipschitz_constant(topology)
    step = 1.0 / lipschitz
    B, E = stacked_operators(topology)
    alpha = np.asarray(anchors, dtype=float)[topology.link_array[:, 1]].ravel()
    nx_, ny_ = topology.n * p, topology.num_edges * p

    def project_z(v: np.ndarray) -> np.ndarray:
        out = v.copy()
        out[nx_:nx_ + ny_] = project_ball(v[nx_:nx_ + ny_].reshape(-1, p), measurements.d).ravel()
        out[nx_ + ny_:] = project_ball(v[nx_ + ny_:].reshape(-1, p), measurements.r).ravel()
        return out

    def gradient(v: np.ndarray) -> np.ndarray:
        pd = project_ball((B @ v).reshape(-1, p), radii.D).ravel()
        pr = project_ball((E @ v - alpha).reshape(-1, p), radii.R).ravel()
        return B.T @ pd + E.T @ pr

    def cost(v: np.ndarray) -> float:
        return float(
            0.5 * np.sum(psi(radii.D, (B @ v).reshape(-1, p)))
            + 0.5 * np.sum(psi(radii.R, (E @ v - alpha).reshape(-1, p)))
        )

    z_cur = StackedPoint.from_positions(init_x, measurements, anchors).to_vector()
    z_prev = z_cur.copy()
    costs = [cost(z_cur)]
    converged = False

    t = 0
    for t in range(1, config.max_iters + 1):
        zeta = z_cur + extrapolation_coefficient(t) * (z_cur - z_prev)
        z_new = project_z(zeta - step * gradient(zeta))
        if not np.all(np.isfinite(z_new)):
            raise DivergenceError(t)
        change = _max_relative_change(z_new[:nx_].reshape(-1, p), z_cur[:nx_].reshape(-1, p))
        z_prev, z_cur = z_cur, z_new
        costs.append(cost(z_cur))
        if callback:
            callback(t, z_cur[:nx_].reshape(-1, p))
        if change < config.stop_tol:
            converged = True
            break

    logger.debug(f"Reference FISTA finished after {t} iteration(s), F={costs[-1]:.12g}")
    return ReferenceResult(
        z_hat=StackedPoint.from_vector(z_cur, topology),
        costs=costs,
        iterations=t,
        converged=converged,
        lipschitz=lipschitz,
    )
