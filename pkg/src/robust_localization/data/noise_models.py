"""
Noisy range measurements with outlier and miscalibration faults.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Mapping, Optional

import numpy as np

from ..errors import ConfigurationError, DomainError, ShapeMismatchError
from .network import Edge, NetworkInstance, NetworkTopology

logger = logging.getLogger(__name__)


class NoiseKind(str, Enum):
    GAUSSIAN = "gaussian"
    LAPLACE = "laplace"
    CAUCHY = "cauchy"


class OutlierDraw(str, Enum):
    """Granularity of the Bernoulli draw deciding whether the outlier node misbehaves."""

    TRIAL = "trial"
    MEASUREMENT = "measurement"


@dataclass(frozen=True)
class NoiseModel:
    """
    Zero-centred additive noise.

    ``scale`` is the standard deviation for Gaussian noise (0 means noiseless)
    and the scale parameter for Laplace and Cauchy noise.
    """

    kind: NoiseKind
    scale: float

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", NoiseKind(self.kind))
        except ValueError as e:
            raise ConfigurationError(f"unknown noise kind: {self.kind!r}") from e
        if self.kind is NoiseKind.GAUSSIAN:
            if self.scale < 0:
                raise ConfigurationError(f"Gaussian sigma must be >= 0, got {self.scale}")
        elif self.scale <= 0:
            raise ConfigurationError(f"{self.kind.value} scale must be > 0, got {self.scale}")

    @classmethod
    def gaussian(cls, sigma: float) -> "NoiseModel":
        return cls(NoiseKind.GAUSSIAN, sigma)

    @classmethod
    def laplace(cls, scale: float) -> "NoiseModel":
        return cls(NoiseKind.LAPLACE, scale)

    @classmethod
    def cauchy(cls, scale: float) -> "NoiseModel":
        return cls(NoiseKind.CAUCHY, scale)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return sample_noise(self, rng, size)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "scale": self.scale}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "NoiseModel":
        return cls(NoiseKind(data["kind"]), float(data["scale"]))


def sample_noise(model: NoiseModel, rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw ``size`` i.i.d. samples from ``model``."""
    if model.kind is NoiseKind.GAUSSIAN:
        if model.scale == 0:
            return np.zeros(size)
        return rng.normal(0.0, model.scale, size=size)
    if model.kind is NoiseKind.LAPLACE:
        return rng.laplace(0.0, model.scale, size=size)
    # standard Cauchy by inverse CDF
    u = rng.random(size)
    return model.scale * np.tan(np.pi * (u - 0.5))


@dataclass(frozen=True)
class FaultSpec:
    """
    Fault injection for one trial.

    The outlier node, when faulty, adds an extra ``outlier_model`` draw to
    every incident measurement. The miscalibrated node reports ``gain`` times
    the true distance before the regular noise is added.
    """

    outlier_node: Optional[int] = None
    outlier_probability: float = 0.0
    outlier_model: NoiseModel = field(default_factory=lambda: NoiseModel.laplace(4000.0))
    miscalibrated_node: Optional[int] = None
    gain: float = 1.0
    outlier_draw: OutlierDraw = OutlierDraw.TRIAL

    def __post_init__(self):
        if not 0.0 <= self.outlier_probability <= 1.0:
            raise ConfigurationError(
                f"outlier_probability must be in [0, 1], got {self.outlier_probability}"
            )
        if self.gain <= 0:
            raise ConfigurationError(f"gain must be > 0, got {self.gain}")
        try:
            object.__setattr__(self, "outlier_draw", OutlierDraw(self.outlier_draw))
        except ValueError as e:
            raise ConfigurationError(f"unknown outlier_draw: {self.outlier_draw!r}") from e

    def validate_for(self, topology: NetworkTopology) -> None:
        for name in ("outlier_node", "miscalibrated_node"):
            node = getattr(self, name)
            if node is not None and not 0 <= node < topology.n:
                raise ConfigurationError(f"{name}={node} is not a sensor id in [0, {topology.n})")

    @classmethod
    def none(cls) -> "FaultSpec":
        return cls()


@dataclass(frozen=True)
class Measurements:
    """
    Ranges aligned with ``topology.edges`` (``d``) and ``topology.anchor_links`` (``r``).
    """

    topology: NetworkTopology
    d: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        d = np.array(self.d, dtype=float).reshape(-1)
        r = np.array(self.r, dtype=float).reshape(-1)
        if d.shape != (self.topology.num_edges,):
            raise ShapeMismatchError(f"expected {self.topology.num_edges} edge ranges, got {d.shape[0]}")
        if r.shape != (self.topology.num_links,):
            raise ShapeMismatchError(f"expected {self.topology.num_links} anchor ranges, got {r.shape[0]}")
        if np.any(d < 0) or np.any(r < 0):
            raise DomainError("ranges must be non-negative")
        d.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "r", r)

    def edge_ranges(self) -> Dict[Edge, float]:
        return dict(zip(self.topology.edges, self.d.tolist()))

    def link_ranges(self) -> Dict[Edge, float]:
        return dict(zip(self.topology.anchor_links, self.r.tolist()))

    @classmethod
    def from_maps(
        cls,
        topology: NetworkTopology,
        d: Mapping[Edge, float],
        r: Mapping[Edge, float],
    ) -> "Measurements":
        if set(d) != set(topology.edges) or set(r) != set(topology.anchor_links):
            raise ShapeMismatchError("measurement keys must equal the topology's edges and anchor links")
        return cls(
            topology,
            np.array([d[e] for e in topology.edges]),
            np.array([r[link] for link in topology.anchor_links]),
        )


def exact_measurements(instance: NetworkInstance) -> Measurements:
    """Noiseless ranges (true distances)."""
    return Measurements(instance.topology, instance.edge_distances(), instance.link_distances())


def sample_measurements(
    instance: NetworkInstance,
    regular: NoiseModel,
    faults: FaultSpec,
    rng: np.random.Generator,
) -> Measurements:
    """
    Draw one range per edge and per anchor link.

    Each value is ``|base + nu (+ outlier draw)|`` where ``base`` is the true
    distance, scaled by ``faults.gain`` when an endpoint is the miscalibrated
    node, ``nu`` follows ``regular``, and the outlier draw is added on
    measurements incident to the outlier node when its Bernoulli indicator fires.

    Raises:
        ConfigurationError: fault node ids outside the topology
    """
    topology = instance.topology
    faults.validate_for(topology)

    edges = topology.edge_array
    links = topology.link_array
    n_edges, n_links = topology.num_edges, topology.num_links

    base_d = instance.edge_distances()
    base_r = instance.link_distances()
    if faults.miscalibrated_node is not None:
        node = faults.miscalibrated_node
        base_d = np.where((edges[:, 0] == node) | (edges[:, 1] == node), faults.gain * base_d, base_d)
        base_r = np.where(links[:, 0] == node, faults.gain * base_r, base_r)

    # Draw order is fixed so streams stay aligned whether or not a fault fires.
    if faults.outlier_draw is OutlierDraw.TRIAL:
        fired = rng.random() < faults.outlier_probability
        fire_d = np.full(n_edges, fired)
        fire_r = np.full(n_links, fired)
    else:
        fire_d = rng.random(n_edges) < faults.outlier_probability
        fire_r = rng.random(n_links) < faults.outlier_probability
    nu_d = regular.sample(rng, n_edges)
    nu_r = regular.sample(rng, n_links)
    out_d = faults.outlier_model.sample(rng, n_edges)
    out_r = faults.outlier_model.sample(rng, n_links)

    if faults.outlier_node is not None:
        node = faults.outlier_node
        hit_d = fire_d & ((edges[:, 0] == node) | (edges[:, 1] == node))
        hit_r = fire_r & (links[:, 0] == node)
        nu_d = nu_d + np.where(hit_d, out_d, 0.0)
        nu_r = nu_r + np.where(hit_r, out_r, 0.0)
        if hit_d.any() or hit_r.any():
            logger.debug(
                f"Outlier node {node} corrupted {int(hit_d.sum())} edge and {int(hit_r.sum())} anchor ranges"
            )

    return Measurements(topology, np.abs(base_d + nu_d), np.abs(base_r + nu_r))
