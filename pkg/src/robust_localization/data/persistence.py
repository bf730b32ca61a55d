"""
Reading and writing of instances, measurements and result tables.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from ..errors import ConfigurationError, ShapeMismatchError
from .network import NetworkInstance, NetworkTopology, edges_from_pairs
from .noise_models import Measurements

logger = logging.getLogger(__name__)

MEASUREMENT_COLUMNS = ["type", "i", "j_or_k", "range_m"]
SYNC_TRAJECTORY_COLUMNS = ["iter", "F", "max_x_change", "broadcast_count"]
ASYNC_TRAJECTORY_COLUMNS = ["activation_index", "awakened_node", "F_tilde", "phi", "broadcast_count"]
TRIAL_COLUMNS = [
    "trial",
    "solver",
    "loss",
    "edge_weight",
    "status",
    "positioning_error_m",
    "final_cost",
    "iterations",
    "broadcast_count",
    "posterior_bound",
    "apriori_bound",
    "message",
]
CDF_COLUMNS = ["error_m", "cdf"]
BOUNDS_COLUMNS = ["trial", "loss", "true_gap", "posterior_bound", "apriori_bound"]
BOUNDS_SUMMARY_COLUMNS = ["loss", "true_gap", "posterior_bound", "apriori_bound", "trials"]
SWEEP_COLUMNS = ["outlier_probability", "solver", "mean_error_m", "std_error_m", "trials"]
SWEEP_TREND_COLUMNS = ["solver", "first_mean_error_m", "last_mean_error_m", "max_drop_m", "non_decreasing"]
RADIUS_SWEEP_COLUMNS = ["radius_m", "solver", "mean_error_m", "std_error_m", "trials"]
COMPARE_COLUMNS = ["sigma_m", "solver", "mean_error_m", "ci95_m", "broadcast_count", "trials"]


# Instances and estimates


def instance_to_dict(instance: NetworkInstance) -> Dict[str, Any]:
    topology = instance.topology
    return {
        "p": topology.p,
        "n": topology.n,
        "m": topology.m,
        "positions": instance.true_positions.tolist(),
        "anchors": instance.anchor_positions.tolist(),
        "edges": [list(e) for e in topology.edges],
        "anchor_links": [list(link) for link in topology.anchor_links],
        "seed": instance.seed,
    }


def instance_from_dict(data: Mapping[str, Any]) -> NetworkInstance:
    try:
        topology = NetworkTopology(
            n=int(data["n"]),
            m=int(data["m"]),
            edges=edges_from_pairs(data["edges"]),
            anchor_links=tuple((int(i), int(k)) for i, k in data["anchor_links"]),
            p=int(data["p"]),
        )
        return NetworkInstance(
            topology, np.array(data["positions"]), np.array(data["anchors"]), data.get("seed")
        )
    except KeyError as e:
        raise ConfigurationError(f"instance document is missing {e}") from e


def save_instance(instance: NetworkInstance, path: Path) -> Path:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(instance_to_dict(instance), f, indent=2)
    logger.info(f"Instance saved: {path}")
    return path


def load_instance(path: Path) -> NetworkInstance:
    """
    Load an instance JSON and check it satisfies the connectivity assumptions.

    Raises:
        ConfigurationError: unreadable or incomplete document
        TopologyError: the stored network is not usable
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"cannot read instance {path}: {e}") from e
    instance = instance_from_dict(data)
    instance.topology.validate()
    logger.info(f"Instance loaded: {path} (n={instance.topology.n}, |E|={instance.topology.num_edges})")
    return instance


def save_estimate(x_hat: np.ndarray, path: Path, seed: Optional[int] = None) -> Path:
    x_hat = np.asarray(x_hat, dtype=float)
    document = {"p": int(x_hat.shape[1]), "n": int(x_hat.shape[0]), "positions": x_hat.tolist(), "seed": seed}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2)
    return path


def load_estimate(path: Path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    return np.array(data["positions"], dtype=float).reshape(int(data["n"]), int(data["p"]))


# Measurements


def measurements_frame(measurements: Measurements) -> pd.DataFrame:
    topology = measurements.topology
    rows = [("edge", i, j, d) for (i, j), d in zip(topology.edges, measurements.d.tolist())]
    rows += [("anchor", i, k, r) for (i, k), r in zip(topology.anchor_links, measurements.r.tolist())]
    return pd.DataFrame(rows, columns=MEASUREMENT_COLUMNS)


def save_measurements(measurements: Measurements, path: Path) -> Path:
    measurements_frame(measurements).to_csv(path, index=False)
    return path


def load_measurements(path: Path, topology: NetworkTopology) -> Measurements:
    """
    Raises:
        ShapeMismatchError: rows do not cover exactly the topology's edges and links
    """
    df = read_table(path, MEASUREMENT_COLUMNS)
    edges = df[df["type"] == "edge"]
    links = df[df["type"] == "anchor"]
    if len(edges) + len(links) != len(df):
        raise ShapeMismatchError("measurement type must be 'edge' or 'anchor'")
    d = {(int(i), int(j)): float(v) for i, j, v in zip(edges["i"], edges["j_or_k"], edges["range_m"])}
    r = {(int(i), int(k)): float(v) for i, k, v in zip(links["i"], links["j_or_k"], links["range_m"])}
    return Measurements.from_maps(topology, d, r)


# Result tables


def write_table(rows: Iterable[Mapping[str, Any]], path: Path, columns: Sequence[str]) -> pd.DataFrame:
    """Write rows as CSV with the given fixed column order."""
    df = pd.DataFrame(list(rows), columns=list(columns))
    df.to_csv(path, index=False)
    logger.debug(f"Wrote {len(df)} row(s) to {path}")
    return df


def read_table(path: Path, columns: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """
    Read a result CSV so that floats re-parse to the written values.

    Raises:
        ConfigurationError: header does not match ``columns``
    """
    df = pd.read_csv(path, float_precision="round_trip")
    if columns is not None and list(df.columns) != list(columns):
        raise ConfigurationError(f"{path} has columns {list(df.columns)}, expected {list(columns)}")
    return df


def write_sync_trajectory(rows: List[Dict[str, float]], path: Path) -> pd.DataFrame:
    return write_table(rows, path, SYNC_TRAJECTORY_COLUMNS)


def write_async_trajectory(rows: List[Dict[str, float]], path: Path) -> pd.DataFrame:
    return write_table(rows, path, ASYNC_TRAJECTORY_COLUMNS)


def write_excel_summary(tables: Mapping[str, pd.DataFrame], path: Path) -> Path:
    """One sheet per table, written with the openpyxl engine."""
    with pd.ExcelWriter(path, engine="openpyxl") as writer:
        for name, df in tables.items():
            df.to_excel(writer, sheet_name=name[:31], index=False)
    logger.info(f"Excel summary saved: {path}")
    return path
