"""
Monte Carlo experiments: trials, error metrics, CDFs, sweeps, the
one-dimensional bounds study and the communication-matched comparison.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from ..config.settings import Bounds1DSettings, ExperimentConfig
from ..data.network import NetworkInstance, generate_geometric_network
from ..data.noise_models import FaultSpec, Measurements, NoiseKind, NoiseModel, sample_measurements
from ..data.persistence import (
    BOUNDS_COLUMNS,
    BOUNDS_SUMMARY_COLUMNS,
    CDF_COLUMNS,
    COMPARE_COLUMNS,
    RADIUS_SWEEP_COLUMNS,
    SWEEP_COLUMNS,
    SWEEP_TREND_COLUMNS,
    TRIAL_COLUMNS,
    load_instance,
)
from ..errors import DivergenceError, LocalizationError, ShapeMismatchError
from ..utils.rng import instance_rng, trial_rng
from .robust_cost import (
    GapBoundReport,
    HuberRadii,
    LossKind,
    convex_cost_1d,
    convex_minimize_1d,
    gap_bound_report,
    loss_value,
    nonconvex_cost_1d,
    nonconvex_oracle_1d,
)
from .solver_async import ActivationModel, AsyncConfig, async_solve
from .solver_sync import SyncConfig, strong_solve

logger = logging.getLogger(__name__)

ProgressCallback = Callable[[int, int], None]

STATUS_OK = "ok"
STATUS_DIVERGED = "diverged"
STATUS_FAILED = "failed"

BOUND_LOSSES = (LossKind.QUADRATIC, LossKind.ABSOLUTE, LossKind.HUBER)

Z_95 = 1.96


def positioning_error(x_hat: np.ndarray, x_true: np.ndarray) -> float:
    """
    Norm of the stacked estimation error divided by the number of sensors.

    Raises:
        ShapeMismatchError: arrays of different shapes
    """
    x_hat = np.asarray(x_hat, dtype=float)
    x_true = np.asarray(x_true, dtype=float)
    if x_hat.shape != x_true.shape:
        raise ShapeMismatchError(f"estimate shape {x_hat.shape} differs from truth {x_true.shape}")
    return float(np.linalg.norm((x_hat - x_true).ravel()) / x_true.shape[0])


def solver_label(solver: str, loss: str) -> str:
    return f"{solver}-{loss}"


@dataclass
class TrialResult:
    trial: int
    solver: str
    loss: str
    edge_weight: str
    status: str
    positioning_error_m: float
    final_cost: float
    iterations: int
    broadcast_count: int
    posterior_bound: float = math.nan
    apriori_bound: float = math.nan
    message: str = ""
    x_hat: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK

    def to_row(self) -> Dict[str, Any]:
        return {column: getattr(self, column) for column in TRIAL_COLUMNS}


@dataclass(frozen=True)
class TrialPlan:
    """Everything a trial needs besides its index; shared read-only by worker threads."""

    instance: NetworkInstance
    regular: NoiseModel
    faults: FaultSpec
    radii: HuberRadii
    loss: str
    solver: str
    init: str
    side_length: float
    sync_config: SyncConfig
    async_config: AsyncConfig
    master_seed: int
    compute_bounds: bool = False


@dataclass
class MonteCarloResult:
    trials: List[TrialResult]
    summary: Dict[str, float]
    cdf: pd.DataFrame

    def trials_frame(self) -> pd.DataFrame:
        return pd.DataFrame([t.to_row() for t in self.trials], columns=TRIAL_COLUMNS)


def resolve_instance(config: ExperimentConfig) -> NetworkInstance:
    """Load the configured instance file, or draw one from the master seed."""
    net = config.network
    if net.instance_path:
        return load_instance(net.instance_path)
    seed = config.experiment.seed
    degree_range = (net.mean_degree_range[0], net.mean_degree_range[1]) if net.mean_degree_range else None
    return generate_geometric_network(
        net.n,
        net.m,
        net.side_length_m,
        net.comm_radius_m,
        net.dimension,
        instance_rng(seed),
        max_retries=net.max_retries,
        seed=seed,
        mean_degree_range=degree_range,
    )


def build_plan(
    config: ExperimentConfig,
    instance: NetworkInstance,
    loss: Optional[str] = None,
    solver: Optional[str] = None,
    regular: Optional[NoiseModel] = None,
    faults: Optional[FaultSpec] = None,
    radii: Optional[HuberRadii] = None,
    sync_config: Optional[SyncConfig] = None,
    async_config: Optional[AsyncConfig] = None,
) -> TrialPlan:
    """Resolve a configuration into a trial plan; keyword arguments override single pieces."""
    loss = loss or config.radii.loss
    side = config.network.side_length_m
    return TrialPlan(
        instance=instance,
        regular=regular or config.noise.regular_model(),
        faults=faults or config.noise.fault_spec(),
        radii=radii or config.radii.build(instance.topology, side, loss),
        loss=loss,
        solver=solver or config.solver.kind,
        init=config.solver.init,
        side_length=side,
        sync_config=sync_config or config.solver.sync_config(),
        async_config=async_config or config.solver.async_config(),
        master_seed=config.experiment.seed,
        compute_bounds=config.experiment.compute_bounds,
    )


def draw_trial_inputs(plan: TrialPlan, rng: np.random.Generator):
    """Measurements first, then the initial positions, from the trial's stream."""
    instance = plan.instance
    measurements = sample_measurements(instance, plan.regular, plan.faults, rng)
    topology = instance.topology
    init_x = rng.uniform(0.0, plan.side_length, size=(topology.n, topology.p))
    if plan.init == "truth":
        init_x = np.array(instance.true_positions)
    return measurements, init_x


def solve_measurements(
    plan: TrialPlan, measurements: Measurements, init_x: np.ndarray, rng: np.random.Generator
):
    """
    Run the planned solver.

    Returns:
        (x_hat, final_cost, iterations, broadcast_count, result object)
    """
    anchors = plan.instance.anchor_positions
    if plan.solver == "async":
        model = ActivationModel.uniform(plan.instance.topology.n, rng)
        result = async_solve(measurements, plan.radii, anchors, init_x, model, plan.async_config)
        return result.x_hat, result.costs[-1], len(result.rows) - 1, result.broadcast_count, result
    result = strong_solve(measurements, plan.radii, anchors, init_x, plan.sync_config)
    return result.x_hat, result.costs[-1], result.iterations, result.broadcast_count, result


def run_trial(plan: TrialPlan, trial: int) -> TrialResult:
    """
    One seeded trial. Library errors are recorded in the result, not raised.
    """
    edge_weight = plan.async_config.edge_weight.value if plan.solver == "async" else ""
    base = dict(trial=trial, solver=plan.solver, loss=plan.loss, edge_weight=edge_weight)
    rng = trial_rng(plan.master_seed, trial)
    try:
        measurements, init_x = draw_trial_inputs(plan, rng)
        x_hat, cost, iterations, broadcasts, _ = solve_measurements(plan, measurements, init_x, rng)
        result = TrialResult(
            **base,
            status=STATUS_OK,
            positioning_error_m=positioning_error(x_hat, plan.instance.true_positions),
            final_cost=cost,
            iterations=iterations,
            broadcast_count=broadcasts,
            x_hat=x_hat,
        )
        if plan.compute_bounds:
            report = gap_bound_report(x_hat, measurements, plan.radii, plan.instance.anchor_positions)
            result.posterior_bound = report.posterior_bound
            result.apriori_bound = report.apriori_bound
        return result
    except LocalizationError as e:
        status = STATUS_DIVERGED if isinstance(e, DivergenceError) else STATUS_FAILED
        logger.warning(f"Trial {trial} {status}: {e}")
        return TrialResult(
            **base,
            status=status,
            positioning_error_m=math.nan,
            final_cost=math.nan,
            iterations=getattr(e, "iteration", 0),
            broadcast_count=0,
            message=str(e),
        )


def run_trials(
    plan: TrialPlan,
    trials: int,
    workers: int = 1,
    progress_callback: Optional[ProgressCallback] = None,
) -> List[TrialResult]:
    """
    Run trials ``0 .. trials-1``, in threads when ``workers > 1``.

    Each trial owns its random stream, so the output does not depend on
    ``workers``; results come back sorted by trial index.
    """
    results: List[TrialResult] = []
    if workers <= 1:
        for t in range(trials):
            results.append(run_trial(plan, t))
            if progress_callback:
                progress_callback(t + 1, trials)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_trial, plan, t) for t in range(trials)]
            for done, future in enumerate(as_completed(futures), start=1):
                results.append(future.result())
                if progress_callback:
                    progress_callback(done, trials)
    return sorted(results, key=lambda r: r.trial)


def empirical_cdf(errors: Sequence[float]) -> pd.DataFrame:
    """
    Empirical CDF sampled at every observed finite error.

    Ties share the CDF value of their last occurrence; the final row is 1.0.
    """
    values = np.sort(np.asarray([e for e in errors if np.isfinite(e)], dtype=float))
    if values.size == 0:
        return pd.DataFrame(columns=CDF_COLUMNS)
    unique, counts = np.unique(values, return_counts=True)
    cdf = np.cumsum(counts) / values.size
    cdf[-1] = 1.0
    return pd.DataFrame({"error_m": unique, "cdf": cdf}, columns=CDF_COLUMNS)


def summarize_trials(results: Sequence[TrialResult]) -> Dict[str, float]:
    """Mean, standard deviation and 95% half-width of the positioning error over successful trials."""
    errors = np.array([r.positioning_error_m for r in results if r.ok], dtype=float)
    count = int(errors.size)
    mean = float(errors.mean()) if count else math.nan
    std = float(errors.std(ddof=1)) if count > 1 else (0.0 if count else math.nan)
    ci95 = Z_95 * std / math.sqrt(count) if count else math.nan
    return {
        "mean_error_m": mean,
        "std_error_m": std,
        "ci95_m": ci95,
        "trials": count,
        "failed": len(results) - count,
    }


def run_monte_carlo(
    config: ExperimentConfig,
    instance: Optional[NetworkInstance] = None,
    progress_callback: Optional[ProgressCallback] = None,
    **plan_overrides: Any,
) -> MonteCarloResult:
    """
    ``config.experiment.trials`` independent trials on one network instance.

    Args:
        config: Validated configuration
        instance: Network to use; resolved from the configuration when omitted
        progress_callback: Called as ``(completed, total)``
        **plan_overrides: Passed to :func:`build_plan`

    Returns:
        MonteCarloResult with per-trial rows, summary and empirical CDF
    """
    instance = instance or resolve_instance(config)
    plan = build_plan(config, instance, **plan_overrides)
    logger.info(
        f"Monte Carlo: {config.experiment.trials} trial(s), solver={plan.solver}, loss={plan.loss}, "
        f"seed={plan.master_seed}"
    )
    results = run_trials(plan, config.experiment.trials, config.experiment.workers, progress_callback)
    summary = summarize_trials(results)
    if summary["failed"]:
        logger.warning(f"{summary['failed']} trial(s) did not finish")
    return MonteCarloResult(results, summary, empirical_cdf([r.positioning_error_m for r in results]))


@dataclass
class SweepResult:
    rows: pd.DataFrame
    trend: pd.DataFrame


def _summary_row(summary: Dict[str, float], **keys: Any) -> Dict[str, Any]:
    return {
        **keys,
        "mean_error_m": summary["mean_error_m"],
        "std_error_m": summary["std_error_m"],
        "trials": summary["trials"],
    }


def outlier_trend_summary(sweep: pd.DataFrame, tolerance_m: Optional[float] = None) -> pd.DataFrame:
    """
    Per-solver check that the mean error does not decrease with the outlier probability.

    A step counts as a decrease only when the drop exceeds ``tolerance_m``,
    or, without a tolerance, the sum of the two points' 95% half-widths.
    """
    rows = []
    for solver, group in sweep.groupby("solver", sort=False):
        group = group.sort_values("outlier_probability")
        means = group["mean_error_m"].to_numpy(dtype=float)
        if tolerance_m is None:
            half = Z_95 * group["std_error_m"].to_numpy(dtype=float) / np.sqrt(
                np.maximum(group["trials"].to_numpy(dtype=float), 1.0)
            )
            allowed = np.nan_to_num(half[:-1] + half[1:])
        else:
            allowed = np.full(max(means.size - 1, 0), float(tolerance_m))
        drops = means[:-1] - means[1:]
        rows.append(
            {
                "solver": solver,
                "first_mean_error_m": float(means[0]),
                "last_mean_error_m": float(means[-1]),
                "max_drop_m": float(max(drops.max(initial=0.0), 0.0)),
                "non_decreasing": bool(np.all(drops <= allowed)),
            }
        )
    return pd.DataFrame(rows, columns=SWEEP_TREND_COLUMNS)


def sweep_outlier_probability(
    config: ExperimentConfig,
    probabilities: Optional[Sequence[float]] = None,
    losses: Optional[Sequence[str]] = None,
    instance: Optional[NetworkInstance] = None,
    progress_callback: Optional[ProgressCallback] = None,
) -> SweepResult:
    """
    Mean positioning error per outlier probability and per loss, plus the trend per solver.

    Every grid point reuses the same trial streams, so the points differ
    only in whether the outlier node misbehaves.
    """
    probabilities = list(config.experiment.sweep_probabilities if probabilities is None else probabilities)
    losses = list(losses or config.experiment.sweep_losses)
    instance = instance or resolve_instance(config)
    base_faults = config.noise.fault_spec()
    trials = config.experiment.trials

    rows = []
    for probability in probabilities:
        faults = replace(base_faults, outlier_probability=float(probability))
        for loss in losses:
            plan = build_plan(config, instance, loss=loss, faults=faults)
            label = solver_label(plan.solver, loss)
            summary = summarize_trials(run_trials(plan, trials, config.experiment.workers, progress_callback))
            rows.append(_summary_row(summary, outlier_probability=float(probability), solver=label))
            logger.info(
                f"Outlier probability {probability:g}, {label}: mean error {summary['mean_error_m']:.3f} m"
            )

    df = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
    trend = outlier_trend_summary(df)
    for _, row in trend.iterrows():
        message = (
            f"Trend {row['solver']}: {row['first_mean_error_m']:.3f} m -> {row['last_mean_error_m']:.3f} m, "
            f"largest drop {row['max_drop_m']:.3f} m"
        )
        if row["non_decreasing"]:
            logger.info(f"{message}, non-decreasing")
        else:
            logger.warning(f"{message}, decreases beyond the confidence band")
    return SweepResult(df, trend)


def sweep_huber_radius(
    config: ExperimentConfig,
    radii_m: Optional[Sequence[float]] = None,
    instance: Optional[NetworkInstance] = None,
    progress_callback: Optional[ProgressCallback] = None,
) -> pd.DataFrame:
    """Mean positioning error of the Huber estimator for each common radius in ``radii_m``."""
    radii_m = list(config.experiment.radius_grid_m if radii_m is None else radii_m)
    instance = instance or resolve_instance(config)
    topology = instance.topology

    rows = []
    for radius in radii_m:
        plan = build_plan(config, instance, loss="huber", radii=HuberRadii.uniform(topology, radius))
        summary = summarize_trials(
            run_trials(plan, config.experiment.trials, config.experiment.workers, progress_callback)
        )
        rows.append(_summary_row(summary, radius_m=float(radius), solver=solver_label(plan.solver, "huber")))
        logger.info(f"Huber radius {radius:g} m: mean error {summary['mean_error_m']:.3f} m")
    return pd.DataFrame(rows, columns=RADIUS_SWEEP_COLUMNS)


@dataclass
class BoundsResult:
    rows: pd.DataFrame
    summary: pd.DataFrame


def _draw_1d_ranges(settings: Bounds1DSettings, rng: np.random.Generator) -> np.ndarray:
    anchors = np.asarray(settings.anchors, dtype=float)
    distances = np.abs(settings.true_position - anchors)
    noise = NoiseModel.gaussian(settings.sigma_regular).sample(rng, anchors.size)
    corrupted = int(rng.integers(anchors.size))
    noise[corrupted] += NoiseModel(NoiseKind(settings.outlier_kind), settings.sigma_outlier).sample(rng, 1)[0]
    return np.abs(distances + noise)


def bounds_trial_1d(
    anchors: np.ndarray,
    ranges: np.ndarray,
    radius: float,
    loss: LossKind,
    grid_points: int,
) -> GapBoundReport:
    """
    True gap and both bounds for one single-node problem on the line.

    The convex minimizer is handed to the nonconvex search as a candidate, so
    the reported gap never exceeds the posterior bound evaluated there.
    """
    radii = np.full(anchors.size, float(radius))
    f_star, x_f = convex_minimize_1d(anchors, ranges, radii, loss, grid_points)
    g_star, _ = nonconvex_oracle_1d(anchors, ranges, radii, loss, grid_points, candidates=(x_f,))
    f_at = float(convex_cost_1d(x_f, anchors, ranges, radii, loss)[0])
    g_at = float(nonconvex_cost_1d(x_f, anchors, ranges, radii, loss)[0])

    disc = np.abs(x_f - anchors) - ranges
    delta = radii if loss is LossKind.HUBER else None
    terms = 0.5 * np.asarray(loss_value(loss, disc, delta))
    posterior = float(np.sum(np.where(disc <= 0, terms, 0.0)))
    apriori = float(0.5 * np.sum(loss_value(loss, ranges, delta)))
    true_gap = max(0.0, min(g_star, g_at) - min(f_star, f_at))
    return GapBoundReport(loss, posterior, apriori, true_gap=true_gap)


def bounds_experiment_1d(
    settings: Bounds1DSettings,
    master_seed: int,
    losses: Sequence[LossKind] = BOUND_LOSSES,
    progress_callback: Optional[ProgressCallback] = None,
) -> BoundsResult:
    """
    Optimality gap of the convex relaxation versus its two bounds, per loss.

    Each trial draws ``r_k = |dist_k + nu_k|`` with Gaussian ``nu_k`` and adds an
    outlier draw to one randomly chosen range; all losses see the same ranges.
    """
    anchors = np.asarray(settings.anchors, dtype=float)
    rows = []
    for t in range(settings.trials):
        ranges = _draw_1d_ranges(settings, trial_rng(master_seed, t))
        for loss in losses:
            loss = LossKind(loss)
            report = bounds_trial_1d(anchors, ranges, settings.huber_radius, loss, settings.grid_points)
            rows.append({"trial": t, "loss": loss.value, **report.to_row()})
        if progress_callback:
            progress_callback(t + 1, settings.trials)

    df = pd.DataFrame(rows, columns=BOUNDS_COLUMNS)
    summary = (
        df.groupby("loss", sort=False)[["true_gap", "posterior_bound", "apriori_bound"]]
        .mean()
        .reset_index()
    )
    summary["trials"] = settings.trials
    summary = summary[BOUNDS_SUMMARY_COLUMNS]
    for _, row in summary.iterrows():
        logger.info(
            f"{row['loss']}: true gap {row['true_gap']:.4f}, posterior {row['posterior_bound']:.4f}, "
            f"a-priori {row['apriori_bound']:.4f}"
        )
    return BoundsResult(df, summary)


def sync_vs_async_comm_matched(
    config: ExperimentConfig,
    sigmas_m: Optional[Sequence[float]] = None,
    instance: Optional[NetworkInstance] = None,
    progress_callback: Optional[ProgressCallback] = None,
) -> pd.DataFrame:
    """
    Mean error of both solvers under the same number of broadcasts.

    The synchronous run gets ``sync_iters`` full rounds (n broadcasts each,
    no early stop); the asynchronous run gets ``n * sync_iters`` activations
    (one broadcast each). Both see identical measurements and initial
    positions in every trial.
    """
    settings = config.compare
    sigmas_m = list(settings.sigmas_m if sigmas_m is None else sigmas_m)
    instance = instance or resolve_instance(config)
    n = instance.topology.n
    faults = replace(
        config.noise.fault_spec(),
        outlier_model=NoiseModel(NoiseKind(settings.outlier_kind), settings.outlier_scale_m),
        outlier_probability=settings.outlier_probability,
    )
    sync_config = SyncConfig(max_iters=settings.sync_iters, stop_tol=0.0,
                             lipschitz_override=config.solver.lipschitz_override)
    async_config = replace(
        config.solver.async_config(num_activations=n * settings.sync_iters),
        edge_weight=settings.edge_weight,
    )

    rows = []
    for sigma in sigmas_m:
        for solver in ("sync", "async"):
            plan = build_plan(
                config,
                instance,
                loss="huber",
                solver=solver,
                regular=NoiseModel.gaussian(sigma),
                faults=faults,
                sync_config=sync_config,
                async_config=async_config,
            )
            results = run_trials(plan, settings.trials, config.experiment.workers, progress_callback)
            summary = summarize_trials(results)
            broadcasts = [r.broadcast_count for r in results if r.ok]
            rows.append(
                {
                    "sigma_m": float(sigma),
                    "solver": solver,
                    "mean_error_m": summary["mean_error_m"],
                    "ci95_m": summary["ci95_m"],
                    "broadcast_count": int(broadcasts[0]) if broadcasts else 0,
                    "trials": summary["trials"],
                }
            )
            logger.info(f"sigma={sigma:g} m, {solver}: mean error {summary['mean_error_m']:.3f} m")
    return pd.DataFrame(rows, columns=COMPARE_COLUMNS)
