"""
Experiment configuration loaded from JSON.
"""

import copy
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Type, TypeVar

from ..core.robust_cost import HuberRadii
from ..core.solver_async import AsyncConfig, EdgeWeight
from ..core.solver_sync import SyncConfig
from ..data.network import NetworkTopology
from ..data.noise_models import FaultSpec, NoiseKind, NoiseModel, OutlierDraw
from ..errors import ConfigurationError

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).parent / "default_experiment.json"

LOSSES = ("huber", "l2")
SOLVERS = ("sync", "async")
INITS = ("uniform", "truth")

T = TypeVar("T")


def _build(cls: Type[T], data: Mapping[str, Any], group: str) -> T:
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"unknown keys in '{group}': {sorted(unknown)}")
    return cls(**data)


@dataclass
class NetworkSettings:
    n: int = 10
    m: int = 4
    side_length_m: float = 1000.0
    comm_radius_m: float = 480.0
    mean_degree_range: Optional[List[float]] = field(default_factory=lambda: [4.0, 4.6])
    dimension: int = 2
    max_retries: int = 1000
    instance_path: Optional[str] = None

    def validate(self) -> None:
        if self.n < 1 or self.m < 1:
            raise ConfigurationError("network needs n >= 1 and m >= 1")
        if self.side_length_m <= 0 or self.comm_radius_m <= 0:
            raise ConfigurationError("side_length_m and comm_radius_m must be positive")
        if self.dimension not in (2, 3):
            raise ConfigurationError(f"dimension must be 2 or 3, got {self.dimension}")
        if self.mean_degree_range is not None:
            if len(self.mean_degree_range) != 2 or self.mean_degree_range[0] > self.mean_degree_range[1]:
                raise ConfigurationError(
                    f"mean_degree_range must be [low, high], got {self.mean_degree_range}"
                )


@dataclass
class NoiseSettings:
    regular_kind: str = "gaussian"
    regular_scale_m: float = 40.0
    outlier_node: Optional[int] = 6
    outlier_probability: float = 1.0
    outlier_kind: str = "laplace"
    outlier_scale_m: float = 4000.0
    outlier_draw: str = "trial"
    miscalibrated_node: Optional[int] = 7
    gain: float = 0.2

    def regular_model(self) -> NoiseModel:
        return NoiseModel(NoiseKind(self.regular_kind), self.regular_scale_m)

    def outlier_model(self) -> NoiseModel:
        return NoiseModel(NoiseKind(self.outlier_kind), self.outlier_scale_m)

    def fault_spec(self) -> FaultSpec:
        return FaultSpec(
            outlier_node=self.outlier_node,
            outlier_probability=self.outlier_probability,
            outlier_model=self.outlier_model(),
            miscalibrated_node=self.miscalibrated_node,
            gain=self.gain,
            outlier_draw=OutlierDraw(self.outlier_draw),
        )

    def validate(self) -> None:
        try:
            self.regular_model()
            self.fault_spec()
        except (ValueError, ConfigurationError) as e:
            raise ConfigurationError(f"invalid noise settings: {e}") from e


@dataclass
class RadiiSettings:
    loss: str = "huber"
    edge_radius_m: float = 80.0
    anchor_radius_m: float = 80.0
    quadratic_factor: float = 1e6

    def build(self, topology: NetworkTopology, scene_size: float, loss: Optional[str] = None) -> HuberRadii:
        """Huber radii, or the large-radius sentinel for the L2 baseline."""
        if (loss or self.loss) == "l2":
            return HuberRadii.quadratic(topology, scene_size, self.quadratic_factor)
        return HuberRadii.uniform(topology, self.edge_radius_m, self.anchor_radius_m)

    def validate(self) -> None:
        if self.loss not in LOSSES:
            raise ConfigurationError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.edge_radius_m <= 0 or self.anchor_radius_m <= 0 or self.quadratic_factor <= 0:
            raise ConfigurationError("radii and quadratic_factor must be positive")


@dataclass
class SolverSettings:
    kind: str = "sync"
    init: str = "uniform"
    max_iters: int = 5000
    stop_tol: float = 1e-7
    lipschitz_override: Optional[float] = None
    activations: int = 5000
    inner_tol: float = 1e-9
    max_inner_iters: int = 2000
    edge_weight: str = "duplicated"
    phi_every: int = 0

    def sync_config(self) -> SyncConfig:
        return SyncConfig(self.max_iters, self.stop_tol, self.lipschitz_override)

    def async_config(self, num_activations: Optional[int] = None) -> AsyncConfig:
        return AsyncConfig(
            num_activations=self.activations if num_activations is None else num_activations,
            inner_tol=self.inner_tol,
            max_inner_iters=self.max_inner_iters,
            edge_weight=EdgeWeight(self.edge_weight),
            phi_every=self.phi_every,
            lipschitz_override=self.lipschitz_override,
        )

    def validate(self) -> None:
        if self.kind not in SOLVERS:
            raise ConfigurationError(f"solver kind must be one of {SOLVERS}, got {self.kind!r}")
        if self.init not in INITS:
            raise ConfigurationError(f"init must be one of {INITS}, got {self.init!r}")
        try:
            self.sync_config()
            self.async_config()
        except (ValueError, ConfigurationError) as e:
            raise ConfigurationError(f"invalid solver settings: {e}") from e


@dataclass
class ExperimentSettings:
    trials: int = 200
    seed: int = 2024
    output_dir: str = "results"
    workers: int = 1
    compute_bounds: bool = False
    sweep_probabilities: List[float] = field(default_factory=lambda: [0.0, 0.2, 0.4, 0.6, 0.8, 1.0])
    sweep_losses: List[str] = field(default_factory=lambda: ["huber", "l2"])
    radius_grid_m: List[float] = field(default_factory=lambda: [40.0, 60.0, 80.0, 100.0])

    def validate(self) -> None:
        if self.trials < 1:
            raise ConfigurationError(f"trials must be >= 1, got {self.trials}")
        if self.workers < 1:
            raise ConfigurationError(f"workers must be >= 1, got {self.workers}")
        if any(not 0.0 <= prob <= 1.0 for prob in self.sweep_probabilities):
            raise ConfigurationError("sweep probabilities must lie in [0, 1]")
        if any(loss not in LOSSES for loss in self.sweep_losses):
            raise ConfigurationError(f"sweep losses must be among {LOSSES}")
        if any(radius <= 0 for radius in self.radius_grid_m):
            raise ConfigurationError("radius grid values must be positive")


@dataclass
class Bounds1DSettings:
    anchors: List[float] = field(default_factory=lambda: [0.0, 1.0])
    true_position: float = 0.4
    sigma_regular: float = 0.04
    sigma_outlier: float = 4.0
    outlier_kind: str = "gaussian"
    huber_radius: float = 0.08
    trials: int = 500
    grid_points: int = 20001

    def validate(self) -> None:
        if not self.anchors:
            raise ConfigurationError("bounds1d needs at least one anchor")
        if self.trials < 1 or self.grid_points < 3:
            raise ConfigurationError("bounds1d needs trials >= 1 and grid_points >= 3")
        if self.huber_radius <= 0:
            raise ConfigurationError("huber_radius must be positive")
        try:
            NoiseModel(NoiseKind.GAUSSIAN, self.sigma_regular)
            NoiseModel(NoiseKind(self.outlier_kind), self.sigma_outlier)
        except (ValueError, ConfigurationError) as e:
            raise ConfigurationError(f"invalid bounds1d noise: {e}") from e


@dataclass
class CompareSettings:
    sigmas_m: List[float] = field(default_factory=lambda: [10.0, 20.0, 40.0])
    sync_iters: int = 100
    outlier_kind: str = "gaussian"
    outlier_scale_m: float = 5000.0
    outlier_probability: float = 1.0
    edge_weight: str = "exact"
    trials: int = 50

    def validate(self) -> None:
        if self.sync_iters < 0 or self.trials < 1:
            raise ConfigurationError("compare needs sync_iters >= 0 and trials >= 1")
        if any(sigma < 0 for sigma in self.sigmas_m):
            raise ConfigurationError("noise levels must be non-negative")
        try:
            EdgeWeight(self.edge_weight)
            NoiseModel(NoiseKind(self.outlier_kind), self.outlier_scale_m)
        except (ValueError, ConfigurationError) as e:
            raise ConfigurationError(f"invalid compare settings: {e}") from e


GROUPS = {
    "network": NetworkSettings,
    "noise": NoiseSettings,
    "radii": RadiiSettings,
    "solver": SolverSettings,
    "experiment": ExperimentSettings,
    "bounds1d": Bounds1DSettings,
    "compare": CompareSettings,
}


@dataclass
class ExperimentConfig:
    """Complete, replayable experiment description."""

    network: NetworkSettings = field(default_factory=NetworkSettings)
    noise: NoiseSettings = field(default_factory=NoiseSettings)
    radii: RadiiSettings = field(default_factory=RadiiSettings)
    solver: SolverSettings = field(default_factory=SolverSettings)
    experiment: ExperimentSettings = field(default_factory=ExperimentSettings)
    bounds1d: Bounds1DSettings = field(default_factory=Bounds1DSettings)
    compare: CompareSettings = field(default_factory=CompareSettings)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        unknown = set(data) - set(GROUPS)
        if unknown:
            raise ConfigurationError(f"unknown configuration groups: {sorted(unknown)}")
        try:
            groups = {name: _build(group_cls, data.get(name, {}), name) for name, group_cls in GROUPS.items()}
        except TypeError as e:
            raise ConfigurationError(f"malformed configuration: {e}") from e
        return cls(**groups)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def validate(self) -> "ExperimentConfig":
        for name in GROUPS:
            getattr(self, name).validate()
        return self

    def copy(self) -> "ExperimentConfig":
        return copy.deepcopy(self)


def load_config(path: Optional[Path] = None) -> ExperimentConfig:
    """
    Load a configuration file, defaulting to the packaged ten-sensor scenario.

    Args:
        path: JSON file with the groups network/noise/radii/solver/experiment/bounds1d/compare

    Returns:
        Validated ExperimentConfig
    """
    path = Path(path) if path else DEFAULT_CONFIG_PATH
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"cannot read configuration {path}: {e}") from e
    logger.info(f"Loaded configuration: {path}")
    return ExperimentConfig.from_dict(data).validate()


def apply_overrides(config: ExperimentConfig, overrides: Mapping[str, Any]) -> ExperimentConfig:
    """
    Return a copy with dotted keys (``"experiment.seed"``) replaced.

    ``None`` values are skipped so unset CLI flags leave the file's values.
    """
    updated = config.copy()
    for dotted, value in overrides.items():
        if value is None:
            continue
        group_name, _, key = dotted.partition(".")
        group = getattr(updated, group_name, None)
        if group is None or key not in {f.name for f in fields(group)}:
            raise ConfigurationError(f"unknown configuration key: {dotted}")
        setattr(group, key, value)
    return updated.validate()


def save_config(config: ExperimentConfig, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config.to_dict(), f, indent=2)
