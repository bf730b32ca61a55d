"""
Cost-function mathematics for robust localization.

Huber loss and its ball-distance representation, projections, the
nonconvex cost g, its convex underestimator f, the stacked cost F over
z = (x, y, w) with its gradient and Lipschitz constant, and optimality-gap
bounds for the quadratic, absolute-value and Huber losses.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, Optional, Tuple, Union

import numpy as np
from scipy.optimize import minimize_scalar

from ..data.network import NetworkTopology, max_anchor_links, max_degree
from ..data.noise_models import Measurements
from ..errors import DomainError, FeasibilityError, ShapeMismatchError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

FEASIBILITY_RTOL = 1e-12
MAX_REFINEMENT_SEEDS = 16


class LossKind(str, Enum):
    QUADRATIC = "quadratic"
    ABSOLUTE = "absolute"
    HUBER = "huber"


def huber(delta: ArrayLike, u: ArrayLike) -> ArrayLike:
    """
    Huber loss: ``u**2`` for ``|u| <= delta``, ``2*delta*|u| - delta**2`` beyond.

    Raises:
        DomainError: if any ``delta <= 0``
    """
    delta = np.asarray(delta, dtype=float)
    if np.any(delta <= 0):
        raise DomainError("Huber radius must be positive")
    a = np.abs(np.asarray(u, dtype=float))
    value = np.where(a <= delta, a * a, 2.0 * delta * a - delta * delta)
    return float(value) if value.ndim == 0 else value


def project_ball(v: np.ndarray, rho: ArrayLike) -> np.ndarray:
    """
    Project rows of ``v`` onto the origin-centred balls of radius ``rho``.

    ``v`` has shape ``(..., p)``; ``rho`` is a scalar or broadcasts against
    ``v.shape[:-1]``.
    """
    v = np.asarray(v, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise DomainError("ball radius must be non-negative")
    norm = np.linalg.norm(v, axis=-1)
    outside = norm > rho
    # radial formula only where ||v|| > rho >= 0, so norm is positive there
    scale = np.where(outside, rho / np.where(outside, norm, 1.0), 1.0)
    return v * scale[..., None]


def dist_sq_ball(v: np.ndarray, rho: ArrayLike) -> ArrayLike:
    """Squared distance from rows of ``v`` to the ball of radius ``rho``."""
    norm = np.linalg.norm(np.asarray(v, dtype=float), axis=-1)
    value = np.maximum(norm - np.asarray(rho, dtype=float), 0.0) ** 2
    return float(value) if np.ndim(value) == 0 else value


def psi(delta: ArrayLike, v: np.ndarray) -> ArrayLike:
    """
    ``||v||**2 - dist_sq_ball(v, delta)``, which equals ``huber(delta, ||v||)``.

    Evaluated in the factored form ``min(||v||, delta) * (||v|| + (||v|| - delta)_+)``.
    """
    delta = np.asarray(delta, dtype=float)
    if np.any(delta <= 0):
        raise DomainError("Huber radius must be positive")
    norm = np.linalg.norm(np.asarray(v, dtype=float), axis=-1)
    inner = np.minimum(norm, delta)
    value = inner * (norm + (norm - inner))
    return float(value) if np.ndim(value) == 0 else value


def loss_value(loss: LossKind, u: ArrayLike, delta: Optional[ArrayLike] = None) -> ArrayLike:
    """Evaluate the quadratic, absolute-value or Huber loss of ``u``."""
    loss = LossKind(loss)
    if loss is LossKind.QUADRATIC:
        return np.square(u)
    if loss is LossKind.ABSOLUTE:
        return np.abs(u)
    if delta is None:
        raise DomainError("Huber loss needs a radius")
    return huber(delta, u)


@dataclass(frozen=True)
class HuberRadii:
    """Per-edge radii ``D`` and per-anchor-link radii ``R`` (meters)."""

    D: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        D = np.array(self.D, dtype=float).reshape(-1)
        R = np.array(self.R, dtype=float).reshape(-1)
        if np.any(D <= 0) or np.any(R <= 0):
            raise DomainError("Huber radii must be positive")
        D.setflags(write=False)
        R.setflags(write=False)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "R", R)

    @classmethod
    def uniform(
        cls, topology: NetworkTopology, edge_radius: float, anchor_radius: Optional[float] = None
    ) -> "HuberRadii":
        anchor_radius = edge_radius if anchor_radius is None else anchor_radius
        return cls(
            np.full(topology.num_edges, float(edge_radius)), np.full(topology.num_links, float(anchor_radius))
        )

    @classmethod
    def quadratic(cls, topology: NetworkTopology, scene_size: float, factor: float = 1e6) -> "HuberRadii":
        """Radii so large that ``psi`` reduces to the squared norm (L2 relaxation)."""
        return cls.uniform(topology, factor * scene_size)

    def check_against(self, topology: NetworkTopology) -> None:
        if self.D.shape != (topology.num_edges,) or self.R.shape != (topology.num_links,):
            raise ShapeMismatchError("radii do not match the topology's edges and anchor links")


@dataclass
class StackedPoint:
    """
    Optimization variable ``z = (x, y, w)``.

    ``x`` is ``(n, p)``; ``y`` is ``(|E|, p)`` with ``y[e]`` oriented as the
    edge ``(i, j)``, i < j; ``w`` is ``(|links|, p)``.
    """

    x: np.ndarray
    y: np.ndarray
    w: np.ndarray

    @classmethod
    def from_positions(cls, x: np.ndarray, measurements: Measurements, anchors: np.ndarray) -> "StackedPoint":
        """Initialization ``y = P(x_i - x_j)``, ``w = P(x_i - a_k)``."""
        x = np.array(x, dtype=float)
        topology = measurements.topology
        edges, links = topology.edge_array, topology.link_array
        y = project_ball(x[edges[:, 0]] - x[edges[:, 1]], measurements.d)
        w = project_ball(x[links[:, 0]] - np.asarray(anchors)[links[:, 1]], measurements.r)
        return cls(x, y.reshape(-1, x.shape[1]), w.reshape(-1, x.shape[1]))

    def projected(self, measurements: Measurements) -> "StackedPoint":
        """Copy with ``y`` and ``w`` projected onto their balls."""
        return StackedPoint(
            self.x.copy(), project_ball(self.y, measurements.d), project_ball(self.w, measurements.r)
        )

    def is_feasible(self, measurements: Measurements, rtol: float = FEASIBILITY_RTOL) -> bool:
        ny = np.linalg.norm(self.y, axis=1)
        nw = np.linalg.norm(self.w, axis=1)
        return bool(
            np.all(ny <= measurements.d * (1 + rtol) + rtol)
            and np.all(nw <= measurements.r * (1 + rtol) + rtol)
        )

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.x.ravel(), self.y.ravel(), self.w.ravel()])

    @classmethod
    def from_vector(cls, vector: np.ndarray, topology: NetworkTopology) -> "StackedPoint":
        p = topology.p
        nx_, ny_ = topology.n * p, topology.num_edges * p
        return cls(
            vector[:nx_].reshape(topology.n, p).copy(),
            vector[nx_:nx_ + ny_].reshape(topology.num_edges, p).copy(),
            vector[nx_ + ny_:].reshape(topology.num_links, p).copy(),
        )

    def copy(self) -> "StackedPoint":
        return StackedPoint(self.x.copy(), self.y.copy(), self.w.copy())

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.x ** 2) + np.sum(self.y ** 2) + np.sum(self.w ** 2)))


def _pair_discrepancies(
    x: np.ndarray, measurements: Measurements, anchors: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    topology = measurements.topology
    edges, links = topology.edge_array, topology.link_array
    x = np.asarray(x, dtype=float)
    if x.shape != (topology.n, topology.p):
        raise ShapeMismatchError(f"expected positions of shape {(topology.n, topology.p)}, got {x.shape}")
    disc_d = np.linalg.norm(x[edges[:, 0]] - x[edges[:, 1]], axis=1) - measurements.d
    disc_r = np.linalg.norm(x[links[:, 0]] - np.asarray(anchors)[links[:, 1]], axis=1) - measurements.r
    return disc_d, disc_r


def _sum_terms(
    loss: LossKind,
    disc_d: np.ndarray,
    disc_r: np.ndarray,
    radii: Optional[HuberRadii],
    mask_d=None,
    mask_r=None,
) -> float:
    D = radii.D if radii is not None else None
    R = radii.R if radii is not None else None
    terms_d = 0.5 * np.asarray(loss_value(loss, disc_d, D))
    terms_r = 0.5 * np.asarray(loss_value(loss, disc_r, R))
    if mask_d is not None:
        terms_d = np.where(mask_d, terms_d, 0.0)
        terms_r = np.where(mask_r, terms_r, 0.0)
    return float(np.sum(terms_d) + np.sum(terms_r))


def nonconvex_cost(
    x: np.ndarray,
    measurements: Measurements,
    radii: HuberRadii,
    anchors: np.ndarray,
    loss: LossKind = LossKind.HUBER,
) -> float:
    """g(x): half the loss of every range discrepancy ``||.|| - range``."""
    disc_d, disc_r = _pair_discrepancies(x, measurements, anchors)
    return _sum_terms(LossKind(loss), disc_d, disc_r, radii)


def convex_cost(
    x: np.ndarray,
    measurements: Measurements,
    radii: HuberRadii,
    anchors: np.ndarray,
    loss: LossKind = LossKind.HUBER,
) -> float:
    """f(x): as :func:`nonconvex_cost` with discrepancies clamped at zero from below."""
    disc_d, disc_r = _pair_discrepancies(x, measurements, anchors)
    return _sum_terms(LossKind(loss), np.maximum(disc_d, 0.0), np.maximum(disc_r, 0.0), radii)


def _stacked_residuals(
    z: StackedPoint, measurements: Measurements, anchors: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    topology = measurements.topology
    edges, links = topology.edge_array, topology.link_array
    res_d = z.x[edges[:, 0]] - z.x[edges[:, 1]] - z.y
    res_r = z.x[links[:, 0]] - np.asarray(anchors)[links[:, 1]] - z.w
    return res_d, res_r


def stacked_cost(
    z: StackedPoint,
    measurements: Measurements,
    radii: HuberRadii,
    anchors: np.ndarray,
    check_feasible: bool = True,
) -> float:
    """
    F(z) = sum_edges 1/2 psi_D(x_i - x_j - y_ij) + sum_links 1/2 psi_R(x_i - a_k - w_ik).

    Raises:
        FeasibilityError: if ``check_feasible`` and z is outside Z
    """
    if check_feasible and not z.is_feasible(measurements):
        raise FeasibilityError("stacked point violates a ball constraint")
    res_d, res_r = _stacked_residuals(z, measurements, anchors)
    return float(0.5 * np.sum(psi(radii.D, res_d)) + 0.5 * np.sum(psi(radii.R, res_r)))


def stacked_gradient(
    z: StackedPoint,
    measurements: Measurements,
    radii: HuberRadii,
    anchors: np.ndarray,
) -> StackedPoint:
    """
    Gradient of F, assembled per node without forming B or E.

    x-block: sum of ``P_D(x_i - x_j - y_ij)`` over incident edges (sign-flipped
    for the second endpoint) plus ``P_R(x_i - a_k - w_ik)`` over anchor links;
    y-block: ``-P_D(.)``; w-block: ``-P_R(.)``.
    """
    topology = measurements.topology
    edges, links = topology.edge_array, topology.link_array
    res_d, res_r = _stacked_residuals(z, measurements, anchors)
    g_d = project_ball(res_d, radii.D)
    g_r = project_ball(res_r, radii.R)

    gx = np.zeros_like(z.x, dtype=float)
    np.add.at(gx, edges[:, 0], g_d)
    np.add.at(gx, edges[:, 1], -g_d)
    np.add.at(gx, links[:, 0], g_r)
    return StackedPoint(gx, -g_d, -g_r)


def lipschitz_constant(topology: NetworkTopology) -> float:
    """``L_F = 2 + 2 * max_degree + max_anchor_links``."""
    return float(2 + 2 * max_degree(topology) + max_anchor_links(topology))


@dataclass
class GapBoundReport:
    loss: LossKind
    posterior_bound: float
    apriori_bound: float
    true_gap: Optional[float] = None

    def to_row(self) -> Dict[str, Optional[float]]:
        return {
            "true_gap": self.true_gap,
            "posterior_bound": self.posterior_bound,
            "apriori_bound": self.apriori_bound,
        }


def posterior_gap_bound(
    x_star: np.ndarray,
    measurements: Measurements,
    radii: HuberRadii,
    anchors: np.ndarray,
    loss: LossKind = LossKind.HUBER,
) -> float:
    """
    Bound on ``g* - f*`` available after solving the convex problem.

    Sums half the loss of the discrepancy over the terms where the clamped
    discrepancy vanishes (``||.|| <= range``) at the convex minimizer ``x_star``.
    """
    disc_d, disc_r = _pair_discrepancies(x_star, measurements, anchors)
    return _sum_terms(LossKind(loss), disc_d, disc_r, radii, mask_d=disc_d <= 0, mask_r=disc_r <= 0)


def apriori_gap_bound(
    measurements: Measurements, radii: HuberRadii, loss: LossKind = LossKind.HUBER
) -> float:
    """Bound on ``g* - f*`` from the data alone: half the loss of every range."""
    return _sum_terms(LossKind(loss), measurements.d, measurements.r, radii)


def gap_bound_report(
    x_star: np.ndarray,
    measurements: Measurements,
    radii: HuberRadii,
    anchors: np.ndarray,
    loss: LossKind = LossKind.HUBER,
) -> GapBoundReport:
    return GapBoundReport(
        loss=LossKind(loss),
        posterior_bound=posterior_gap_bound(x_star, measurements, radii, anchors, loss),
        apriori_bound=apriori_gap_bound(measurements, radii, loss),
    )


# One-dimensional single-node problems


def _terms_1d(
    x: np.ndarray, anchors: np.ndarray, ranges: np.ndarray, radii: np.ndarray, loss: LossKind, clamp: bool
) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    disc = np.abs(x[:, None] - anchors[None, :]) - ranges[None, :]
    if clamp:
        disc = np.maximum(disc, 0.0)
    delta = np.broadcast_to(radii, disc.shape) if loss is LossKind.HUBER else None
    return 0.5 * np.sum(loss_value(loss, disc, delta), axis=1)


def nonconvex_cost_1d(x: ArrayLike, anchors, ranges, radii, loss: LossKind = LossKind.HUBER) -> np.ndarray:
    """g at each point of ``x`` for one unknown node on the line."""
    return _terms_1d(
        x,
        np.asarray(anchors, float),
        np.asarray(ranges, float),
        np.asarray(radii, float),
        LossKind(loss),
        clamp=False,
    )


def convex_cost_1d(x: ArrayLike, anchors, ranges, radii, loss: LossKind = LossKind.HUBER) -> np.ndarray:
    """f at each point of ``x`` for one unknown node on the line."""
    return _terms_1d(
        x,
        np.asarray(anchors, float),
        np.asarray(ranges, float),
        np.asarray(radii, float),
        LossKind(loss),
        clamp=True,
    )


def _search_interval(anchors: np.ndarray, ranges: np.ndarray) -> Tuple[float, float]:
    span = 1.05 * float(np.max(ranges, initial=0.0)) + 1e-6
    return float(np.min(anchors)) - span, float(np.max(anchors)) + span


def _minimize_on_line(
    fun, lo: float, hi: float, grid_points: int, candidates: Iterable[float] = ()
) -> Tuple[float, float]:
    grid = np.linspace(lo, hi, grid_points)
    values = fun(grid)

    # grid local minima (one per plateau) seed bounded refinements, best first
    interior = np.arange(1, grid_points - 1)
    local = interior[(values[interior] < values[interior - 1]) & (values[interior] <= values[interior + 1])]
    local = local[np.argsort(values[local], kind="stable")][:MAX_REFINEMENT_SEEDS]
    seeds = set(local.tolist()) | {int(np.argmin(values)), 0, grid_points - 1}

    best_x = float(grid[int(np.argmin(values))])
    best_g = float(values.min())
    for idx in sorted(seeds):
        a = grid[max(idx - 1, 0)]
        b = grid[min(idx + 1, grid_points - 1)]
        if b <= a:
            continue
        res = minimize_scalar(
            lambda t: float(fun(t)[0]), bounds=(a, b), method="bounded", options={"xatol": 1e-12}
        )
        if res.fun < best_g:
            best_g, best_x = float(res.fun), float(res.x)
    for c in candidates:
        value = float(fun(c)[0])
        if value < best_g:
            best_g, best_x = value, float(c)
    return best_g, best_x


def nonconvex_oracle_1d(
    anchors,
    ranges,
    radii,
    loss: LossKind = LossKind.HUBER,
    grid_points: int = 20001,
    candidates: Iterable[float] = (),
) -> Tuple[float, float]:
    """
    Global minimum of the nonconvex 1D cost by dense grid search plus local refinement.

    Args:
        anchors: Anchor coordinates on the line
        ranges: Measured ranges to each anchor
        radii: Huber radius per anchor (ignored for other losses)
        loss: Loss applied to each discrepancy
        grid_points: Grid size over the search interval
        candidates: Extra points evaluated verbatim

    Returns:
        (g*, minimizer)
    """
    anchors = np.asarray(anchors, float)
    ranges = np.asarray(ranges, float)
    lo, hi = _search_interval(anchors, ranges)

    def fun(t):
        return nonconvex_cost_1d(t, anchors, ranges, radii, loss)

    return _minimize_on_line(fun, lo, hi, grid_points, candidates)


def convex_minimize_1d(
    anchors,
    ranges,
    radii,
    loss: LossKind = LossKind.HUBER,
    grid_points: int = 20001,
) -> Tuple[float, float]:
    """Minimum ``(f*, x*)`` of the convex 1D underestimator."""
    anchors = np.asarray(anchors, float)
    ranges = np.asarray(ranges, float)
    lo, hi = _search_interval(anchors, ranges)

    def fun(t):
        return convex_cost_1d(t, anchors, ranges, radii, loss)

    return _minimize_on_line(fun, lo, hi, grid_points)
