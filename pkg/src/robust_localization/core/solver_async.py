"""
Asynchronous randomized block method.

At every tick one node, drawn i.i.d. from the activation probabilities,
solves its local single-source problem with neighbor positions fixed at the
last values it heard, then broadcasts its new position.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np

from ..data.noise_models import Measurements
from ..errors import ConfigurationError, DivergenceError
from .robust_cost import HuberRadii, StackedPoint, lipschitz_constant, project_ball, psi, stacked_cost
from .solver_sync import extrapolation_coefficient

logger = logging.getLogger(__name__)

DEFAULT_INNER_TOL = 1e-9
DEFAULT_MAX_INNER_ITERS = 2000


class EdgeWeight(str, Enum):
    """
    Weight of edge terms in the local problem.

    ``duplicated`` uses 1/4 (duplicated per-node cost); ``exact`` uses 1/2, which
    makes each activation an exact block minimization of the monitored cost.
    """

    DUPLICATED = "duplicated"
    EXACT = "exact"

    @property
    def weight(self) -> float:
        return 0.25 if self is EdgeWeight.DUPLICATED else 0.5


@dataclass
class ActivationModel:
    """Node activation probabilities ``P_i > 0`` summing to one."""

    probabilities: np.ndarray
    rng: np.random.Generator

    def __post_init__(self):
        probs = np.asarray(self.probabilities, dtype=float).reshape(-1)
        if probs.size == 0 or np.any(probs <= 0):
            raise ConfigurationError("every node needs a positive activation probability")
        if abs(probs.sum() - 1.0) > 1e-9:
            raise ConfigurationError(f"activation probabilities sum to {probs.sum()}, not 1")
        self.probabilities = probs / probs.sum()

    @classmethod
    def uniform(cls, n: int, rng: np.random.Generator) -> "ActivationModel":
        return cls(np.full(n, 1.0 / n), rng)

    @property
    def n(self) -> int:
        return self.probabilities.size


def sample_activation(model: ActivationModel) -> int:
    """Draw the id of the next node to wake up."""
    return int(model.rng.choice(model.n, p=model.probabilities))


@dataclass
class AsyncConfig:
    num_activations: int = 1000
    inner_tol: float = DEFAULT_INNER_TOL
    max_inner_iters: int = DEFAULT_MAX_INNER_ITERS
    edge_weight: EdgeWeight = EdgeWeight.DUPLICATED
    phi_every: int = 0
    lipschitz_override: Optional[float] = None

    def __post_init__(self):
        self.edge_weight = EdgeWeight(self.edge_weight)
        if self.num_activations < 0:
            raise ConfigurationError("num_activations must be >= 0")
        if self.inner_tol < 0 or self.max_inner_iters < 1:
            raise ConfigurationError("inner_tol must be >= 0 and max_inner_iters >= 1")
        if self.phi_every < 0:
            raise ConfigurationError("phi_every must be >= 0")


@dataclass
class AsyncState:
    """
    Per-node private variables.

    ``y_copies[e, 0]`` is the lower endpoint's copy (oriented ``x_i - x_j - y``),
    ``y_copies[e, 1]`` the upper endpoint's copy (oriented ``x_j - x_i - y``).
    ``last_writer[e]`` says which endpoint activated last. ``heard[i]`` maps
    each neighbor of ``i`` to the last position it broadcast.
    """

    x: np.ndarray
    y_copies: np.ndarray
    w: np.ndarray
    last_writer: np.ndarray
    heard: List[Dict[int, np.ndarray]] = field(default_factory=list)

    @classmethod
    def initial(cls, init_x: np.ndarray, measurements: Measurements, anchors: np.ndarray) -> "AsyncState":
        topology = measurements.topology
        z = StackedPoint.from_positions(init_x, measurements, anchors)
        copies = np.stack([z.y, -z.y], axis=1).reshape(topology.num_edges, 2, topology.p)
        # every node broadcasts its initial position
        heard = [{j: z.x[j].copy() for j in topology.neighbors(i)} for i in range(topology.n)]
        return cls(z.x, copies, z.w, np.zeros(topology.num_edges, dtype=int), heard)

    def copy(self) -> "AsyncState":
        return AsyncState(
            self.x.copy(),
            self.y_copies.copy(),
            self.w.copy(),
            self.last_writer.copy(),
            [{j: v.copy() for j, v in view.items()} for view in self.heard],
        )

    def refreshed_block(
        self, i: int, measurements: Measurements, anchors: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Node i's position with its edge and anchor variables re-projected
        against the neighbor positions it last heard.

        For fixed positions this is the best feasible y and w, so the local
        cost here never exceeds the monitored cost with either stored copy.
        """
        topology = measurements.topology
        p = topology.p
        incident = topology.incident_edges[i]
        edge_idx = [e for e, _, _ in incident]
        link_idx = list(topology.node_links[i])
        x_i = self.x[i].copy()
        xn = np.array([self.heard[i][j] for _, j, _ in incident], dtype=float).reshape(-1, p)
        a = np.asarray(anchors, dtype=float)[topology.link_array[link_idx, 1]].reshape(-1, p)
        y = project_ball(x_i - xn, measurements.d[edge_idx])
        w = project_ball(x_i - a, measurements.r[link_idx])
        return x_i, y, w

    def write_block(
        self, i: int, measurements: Measurements, x_i: np.ndarray, y: np.ndarray, w: np.ndarray
    ) -> None:
        topology = measurements.topology
        self.x[i] = x_i
        for slot, (e, _, sign) in enumerate(topology.incident_edges[i]):
            side = 0 if sign > 0 else 1
            self.y_copies[e, side] = y[slot]
            self.last_writer[e] = side
        for slot, idx in enumerate(topology.node_links[i]):
            self.w[idx] = w[slot]

    def broadcast(self, i: int, measurements: Measurements) -> None:
        for j in measurements.topology.neighbors(i):
            self.heard[j][i] = self.x[i].copy()

    def freshest_y(self) -> np.ndarray:
        """Edge variables in edge orientation, from the endpoint that wrote last."""
        lower = self.y_copies[:, 0]
        upper = -self.y_copies[:, 1]
        return np.where((self.last_writer == 0)[:, None], lower, upper)

    def as_stacked(self) -> StackedPoint:
        return StackedPoint(self.x.copy(), self.freshest_y(), self.w.copy())


def monitored_cost(
    state: AsyncState,
    measurements: Measurements,
    radii: HuberRadii,
    anchors: np.ndarray,
    edge_weight: EdgeWeight = EdgeWeight.DUPLICATED,
) -> float:
    """
    Cost tracked along an asynchronous run.

    Duplicated weighting: the per-node cost, each endpoint's term using
    its own copy with weight 1/4. Exact weighting: F with the freshest copy of
    every edge variable. Both equal F when the two copies agree.
    """
    if EdgeWeight(edge_weight) is EdgeWeight.EXACT:
        return stacked_cost(state.as_stacked(), measurements, radii, anchors, check_feasible=False)

    topology = measurements.topology
    edges, links = topology.edge_array, topology.link_array
    anchor_res = state.x[links[:, 0]] - np.asarray(anchors)[links[:, 1]] - state.w
    anchor_part = 0.5 * float(np.sum(psi(radii.R, anchor_res)))
    diff = state.x[edges[:, 0]] - state.x[edges[:, 1]]
    own = psi(radii.D, diff - state.y_copies[:, 0])
    other = psi(radii.D, -diff - state.y_copies[:, 1])
    return 0.25 * float(np.sum(own) + np.sum(other)) + anchor_part


@dataclass
class LocalSolution:
    x: np.ndarray
    y: np.ndarray
    w: np.ndarray
    cost: float
    iterations: int


def local_solve(
    i: int,
    neighbor_x: Mapping[int, np.ndarray],
    anchors: np.ndarray,
    measurements: Measurements,
    radii: HuberRadii,
    inner_tol: float = DEFAULT_INNER_TOL,
    edge_weight: EdgeWeight = EdgeWeight.DUPLICATED,
    lipschitz: Optional[float] = None,
    warm_start: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]] = None,
    max_inner_iters: int = DEFAULT_MAX_INNER_ITERS,
) -> LocalSolution:
    """
    Solve node ``i``'s single-source problem with neighbors held fixed.

    Minimizes ``c * sum_j psi_D(x_i - x_j - y_ij) + 1/2 * sum_k psi_R(x_i - a_k - w_ik)``
    over ``x_i`` and the node's ``y``/``w`` inside their balls, by projected
    FISTA with step ``1/L_F``. Stops when the relative cost change drops
    below ``inner_tol`` or after ``max_inner_iters`` steps, and returns the
    best point visited (never worse than the warm start).

    Args:
        i: Node id
        neighbor_x: Last heard position of each neighbor
        anchors: All anchor coordinates, shape ``(m, p)``
        measurements: Ranges (carries the topology)
        radii: Huber radii
        inner_tol: Relative cost-change tolerance
        edge_weight: Edge-term weighting mode
        lipschitz: Step-size constant, defaults to ``L_F`` of the topology
        warm_start: Starting ``(x_i, y, w)`` in node orientation
        max_inner_iters: Iteration cap

    Returns:
        LocalSolution in node orientation

    Raises:
        DivergenceError: non-finite iterate
    """
    topology = measurements.topology
    p = topology.p
    incident = topology.incident_edges[i]
    edge_idx = [e for e, _, _ in incident]
    link_idx = list(topology.node_links[i])

    xn = np.array([neighbor_x[j] for _, j, _ in incident], dtype=float).reshape(-1, p)
    d, D = measurements.d[edge_idx], radii.D[edge_idx]
    a = np.asarray(anchors, dtype=float)[topology.link_array[link_idx, 1]].reshape(-1, p)
    r, R = measurements.r[link_idx], radii.R[link_idx]
    c = EdgeWeight(edge_weight).weight
    step = 1.0 / (lipschitz or lipschitz_constant(topology))

    if warm_start is None:
        x0 = np.vstack([xn, a]).mean(axis=0)
        y0 = project_ball(x0 - xn, d)
        w0 = project_ball(x0 - a, r)
    else:
        x0, y0, w0 = (np.array(v, dtype=float) for v in warm_start)
        y0, w0 = y0.reshape(-1, p), w0.reshape(-1, p)

    def cost(x, y, w) -> float:
        return float(c * np.sum(psi(D, x - xn - y)) + 0.5 * np.sum(psi(R, x - a - w)))

    x_cur, y_cur, w_cur = x0, y0, w0
    x_prev, y_prev, w_prev = x0, y0, w0
    best = (x0, y0, w0)
    best_cost = prev_cost = cost(x0, y0, w0)

    it = 0
    for it in range(1, max_inner_iters + 1):
        beta = extrapolation_coefficient(it)
        xi = x_cur + beta * (x_cur - x_prev)
        ups = y_cur + beta * (y_cur - y_prev)
        om = w_cur + beta * (w_cur - w_prev)

        pd = project_ball(xi - xn - ups, D)
        pr = project_ball(xi - a - om, R)
        x_new = xi - step * (2.0 * c * pd.sum(axis=0) + pr.sum(axis=0))
        y_new = project_ball(ups + step * 2.0 * c * pd, d)
        w_new = project_ball(om + step * pr, r)
        if not np.all(np.isfinite(x_new)):
            raise DivergenceError(it, f"local problem at node {i}")

        x_prev, y_prev, w_prev = x_cur, y_cur, w_cur
        x_cur, y_cur, w_cur = x_new, y_new, w_new
        current = cost(x_cur, y_cur, w_cur)
        if current < best_cost:
            best, best_cost = (x_cur, y_cur, w_cur), current
        if abs(prev_cost - current) <= inner_tol * (1.0 + abs(current)):
            break
        prev_cost = current

    return LocalSolution(best[0].copy(), best[1].copy(), best[2].copy(), best_cost, it)


@dataclass
class AsyncResult:
    x_hat: np.ndarray
    state: AsyncState
    rows: List[Dict[str, float]]
    broadcast_count: int
    edge_weight: EdgeWeight

    @property
    def costs(self) -> List[float]:
        return [row["F_tilde"] for row in self.rows]


def _activate(
    state: AsyncState,
    i: int,
    measurements: Measurements,
    radii: HuberRadii,
    anchors: np.ndarray,
    edge_weight: EdgeWeight,
    inner_tol: float,
    lipschitz: float,
    max_inner_iters: int,
) -> LocalSolution:
    solution = local_solve(
        i,
        state.heard[i],
        anchors,
        measurements,
        radii,
        inner_tol=inner_tol,
        edge_weight=edge_weight,
        lipschitz=lipschitz,
        warm_start=state.refreshed_block(i, measurements, anchors),
        max_inner_iters=max_inner_iters,
    )
    state.write_block(i, measurements, solution.x, solution.y, solution.w)
    return solution


def expected_improvement(
    state: AsyncState,
    model: ActivationModel,
    measurements: Measurements,
    radii: HuberRadii,
    anchors: np.ndarray,
    inner_tol: float = DEFAULT_INNER_TOL,
    lipschitz: Optional[float] = None,
    max_inner_iters: int = DEFAULT_MAX_INNER_ITERS,
) -> float:
    """
    Expected one-activation decrease of the exact-weight monitored cost.

    ``phi = sum_i P_i * (F(state) - F(state with block i re-solved))``; zero
    at a block-optimal state and non-negative up to the inner tolerance.
    """
    lipschitz = lipschitz or lipschitz_constant(measurements.topology)
    base = monitored_cost(state, measurements, radii, anchors, EdgeWeight.EXACT)
    phi = 0.0
    for i, prob in enumerate(model.probabilities):
        trial = state.copy()
        _activate(
            trial, i, measurements, radii, anchors, EdgeWeight.EXACT, inner_tol, lipschitz, max_inner_iters
        )
        phi += prob * (base - monitored_cost(trial, measurements, radii, anchors, EdgeWeight.EXACT))
    return float(phi)


def async_solve(
    measurements: Measurements,
    radii: HuberRadii,
    anchors: np.ndarray,
    init_x: np.ndarray,
    model: ActivationModel,
    config: Optional[AsyncConfig] = None,
    callback: Optional[Callable[[int, np.ndarray], None]] = None,
) -> AsyncResult:
    """
    Run the asynchronous method for ``config.num_activations`` ticks.

    Returns:
        AsyncResult whose rows hold ``(activation_index, awakened_node,
        F_tilde, phi, broadcast_count)``; row 0 is the initialization.

    Raises:
        DivergenceError: non-finite local iterate
    """
    config = config or AsyncConfig()
    topology = measurements.topology
    radii.check_against(topology)
    if model.n != topology.n:
        raise ConfigurationError(f"activation model covers {model.n} nodes, topology has {topology.n}")
    lipschitz = config.lipschitz_override or lipschitz_constant(topology)
    logger.info(
        f"Asynchronous solve: n={topology.n}, activations={config.num_activations}, "
        f"edge weight={config.edge_weight.value}, L_F={lipschitz:g}"
    )

    state = AsyncState.initial(init_x, measurements, anchors)
    broadcasts = 0

    def row(index: int, node: int) -> Dict[str, float]:
        phi = float("nan")
        if config.phi_every and index % config.phi_every == 0:
            phi = expected_improvement(
                state,
                model,
                measurements,
                radii,
                anchors,
                config.inner_tol,
                lipschitz,
                config.max_inner_iters,
            )
        return {
            "activation_index": index,
            "awakened_node": node,
            "F_tilde": monitored_cost(state, measurements, radii, anchors, config.edge_weight),
            "phi": phi,
            "broadcast_count": broadcasts,
        }

    rows = [row(0, -1)]
    for t in range(1, config.num_activations + 1):
        i = sample_activation(model)
        _activate(
            state,
            i,
            measurements,
            radii,
            anchors,
            config.edge_weight,
            config.inner_tol,
            lipschitz,
            config.max_inner_iters,
        )
        state.broadcast(i, measurements)
        broadcasts += 1
        rows.append(row(t, i))
        if callback:
            callback(t, state.x)

    logger.info(f"Asynchronous solve finished: F~={rows[-1]['F_tilde']:.6g}, broadcasts={broadcasts}")
    return AsyncResult(state.x.copy(), state, rows, broadcasts, config.edge_weight)
