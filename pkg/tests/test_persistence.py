"""
Tests for instance, measurement and result-table persistence.
"""

import json

import numpy as np
import pandas as pd
import pytest
from openpyxl import load_workbook

from robust_localization.config.settings import load_config, save_config
from robust_localization.data.persistence import (
    SYNC_TRAJECTORY_COLUMNS,
    TRIAL_COLUMNS,
    instance_from_dict,
    load_estimate,
    load_instance,
    load_measurements,
    read_table,
    save_estimate,
    save_instance,
    save_measurements,
    write_excel_summary,
    write_sync_trajectory,
    write_table,
)
from robust_localization.errors import ConfigurationError, ShapeMismatchError, TopologyError


def test_instance_round_trip(square_instance, temp_dir):
    path = save_instance(square_instance, temp_dir / "instance.json")
    loaded = load_instance(path)
    assert loaded.topology == square_instance.topology
    np.testing.assert_array_equal(loaded.true_positions, square_instance.true_positions)
    np.testing.assert_array_equal(loaded.anchor_positions, square_instance.anchor_positions)
    assert loaded.seed == 0


def test_instance_edges_are_normalized(square_instance, temp_dir):
    path = save_instance(square_instance, temp_dir / "instance.json")
    data = json.loads(path.read_text())
    data["edges"] = [[j, i] for i, j in data["edges"]]
    assert instance_from_dict(data).topology.edges == square_instance.topology.edges


def test_incomplete_instance_document():
    with pytest.raises(ConfigurationError, match="missing"):
        instance_from_dict({"n": 2, "m": 1})


def test_disconnected_instance_rejected_on_load(square_instance, temp_dir):
    path = save_instance(square_instance, temp_dir / "instance.json")
    data = json.loads(path.read_text())
    data["edges"] = [[0, 1], [2, 3]]
    path.write_text(json.dumps(data))
    with pytest.raises(TopologyError, match="connected"):
        load_instance(path)


def test_unreadable_instance(temp_dir):
    path = temp_dir / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ConfigurationError):
        load_instance(path)


def test_measurements_round_trip(noisy, temp_dir):
    path = save_measurements(noisy, temp_dir / "measurements.csv")
    loaded = load_measurements(path, noisy.topology)
    np.testing.assert_array_equal(loaded.d, noisy.d)
    np.testing.assert_array_equal(loaded.r, noisy.r)


def test_measurements_must_cover_topology(noisy, temp_dir):
    path = save_measurements(noisy, temp_dir / "measurements.csv")
    df = pd.read_csv(path)
    df.iloc[1:].to_csv(path, index=False)
    with pytest.raises(ShapeMismatchError):
        load_measurements(path, noisy.topology)


def test_estimate_round_trip(rng, temp_dir):
    x_hat = rng.normal(size=(5, 2)) * 1000
    path = save_estimate(x_hat, temp_dir / "estimate.json", seed=11)
    np.testing.assert_array_equal(load_estimate(path), x_hat)


def test_trial_table_floats_survive(temp_dir):
    rows = [
        {
            "trial": 0,
            "solver": "sync",
            "loss": "huber",
            "edge_weight": "",
            "status": "ok",
            "positioning_error_m": 0.1 + 0.2,
            "final_cost": 1 / 3,
            "iterations": 12,
            "broadcast_count": 120,
            "posterior_bound": float("nan"),
            "apriori_bound": 2.0 ** -40,
            "message": "",
        }
    ]
    write_table(rows, temp_dir / "trials.csv", TRIAL_COLUMNS)
    df = read_table(temp_dir / "trials.csv", TRIAL_COLUMNS)
    assert df.loc[0, "positioning_error_m"] == 0.1 + 0.2
    assert df.loc[0, "final_cost"] == 1 / 3
    assert df.loc[0, "apriori_bound"] == 2.0 ** -40
    assert np.isnan(df.loc[0, "posterior_bound"])


def test_read_table_checks_header(temp_dir):
    write_sync_trajectory([{"iter": 0, "F": 1.0, "max_x_change": float("nan"), "broadcast_count": 0}],
                          temp_dir / "trajectory.csv")
    table = read_table(temp_dir / "trajectory.csv", SYNC_TRAJECTORY_COLUMNS)
    assert list(table.columns) == SYNC_TRAJECTORY_COLUMNS
    with pytest.raises(ConfigurationError):
        read_table(temp_dir / "trajectory.csv", TRIAL_COLUMNS)


def test_excel_summary_has_one_sheet_per_table(temp_dir):
    tables = {
        "trials": pd.DataFrame({"trial": [0, 1], "positioning_error_m": [1.5, 2.5]}),
        "cdf": pd.DataFrame({"error_m": [1.5, 2.5], "cdf": [0.5, 1.0]}),
    }
    path = write_excel_summary(tables, temp_dir / "summary.xlsx")
    workbook = load_workbook(path)
    assert workbook.sheetnames == ["trials", "cdf"]
    assert workbook["cdf"]["B3"].value == 1.0


def test_config_round_trip(temp_dir):
    config = load_config()
    save_config(config, temp_dir / "config.json")
    assert load_config(temp_dir / "config.json") == config
