"""
Core workflow for localization experiments.
"""

import logging
import threading
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import numpy as np
import pandas as pd

from ..config.settings import ExperimentConfig, load_config, save_config
from ..data.network import NetworkInstance, mean_degree
from ..data.persistence import (
    BOUNDS_SUMMARY_COLUMNS,
    CDF_COLUMNS,
    SWEEP_COLUMNS,
    SWEEP_TREND_COLUMNS,
    TRIAL_COLUMNS,
    save_estimate,
    save_instance,
    save_measurements,
    write_async_trajectory,
    write_excel_summary,
    write_sync_trajectory,
)
from ..errors import LocalizationError
from ..utils.file_utils import clear_outputs, create_directory_if_not_exists
from ..utils.rng import trial_rng
from .experiments import (
    bounds_experiment_1d,
    build_plan,
    draw_trial_inputs,
    positioning_error,
    resolve_instance,
    run_monte_carlo,
    solve_measurements,
    sweep_huber_radius,
    sweep_outlier_probability,
    sync_vs_async_comm_matched,
)

logger = logging.getLogger(__name__)

INSTANCE_FILE = "instance.json"
CONFIG_FILE = "config.json"
TRAJECTORY_FILE = "trajectory.csv"
MEASUREMENTS_FILE = "measurements.csv"
ESTIMATE_FILE = "estimate.json"
TRIALS_FILE = "trials.csv"
CDF_FILE = "cdf.csv"
SWEEP_FILE = "sweep.csv"
SWEEP_TREND_FILE = "sweep_trend.csv"
RADIUS_SWEEP_FILE = "radius_sweep.csv"
BOUNDS_FILE = "bounds.csv"
BOUNDS_SUMMARY_FILE = "bounds_summary.csv"
COMPARE_FILE = "compare.csv"
EXCEL_FILE = "summary.xlsx"


class ExperimentWorkflow:
    """Runs one experiment kind end to end and writes its artifacts."""

    def __init__(self, config: Optional[ExperimentConfig] = None, progress_callback=None,
                 write_excel: bool = False):
        """
        Initialize the workflow.

        Args:
            config: Experiment configuration (packaged defaults when omitted)
            progress_callback: Receives ``"LEVEL: message"`` strings
            write_excel: Also write every table into one Excel workbook
        """
        self.config = config or load_config()
        self.progress_callback = progress_callback
        self.write_excel = write_excel

        self.output_dir: Optional[Path] = None
        self.instance: Optional[NetworkInstance] = None

        # Results
        self.results: Dict[str, Any] = {}
        self._tables: Dict[str, pd.DataFrame] = {}

    def set_output_dir(self, output_dir: Path, clear: bool = False) -> bool:
        """
        Set the directory receiving all artifacts.

        Args:
            output_dir: Target directory, created if missing
            clear: Remove earlier csv/json/xlsx results first

        Returns:
            True if the directory is usable, False otherwise
        """
        output_dir = Path(output_dir)
        if not create_directory_if_not_exists(output_dir):
            self._log_error(f"Cannot create output directory: {output_dir}")
            return False
        if clear:
            removed = clear_outputs(output_dir)
            if removed:
                self._log_info(f"Removed {removed} earlier result file(s)")
        self.output_dir = output_dir
        self._log_info(f"Output directory: {output_dir}")
        return True

    # Experiment kinds

    def generate_instance(self) -> bool:
        """Draw (or load) the network instance and save it as JSON."""
        return self._run("gen", self._generate_instance)

    def solve_sync(self) -> bool:
        """Solve trial 0 of the configuration with the synchronous method."""
        return self._run("solve-sync", lambda: self._solve_single("sync"))

    def solve_async(self) -> bool:
        """Solve trial 0 of the configuration with the asynchronous method."""
        return self._run("solve-async", lambda: self._solve_single("async"))

    def monte_carlo(self) -> bool:
        return self._run("mc", self._monte_carlo)

    def sweep(self) -> bool:
        return self._run("sweep", self._sweep)

    def radius_sweep(self) -> bool:
        return self._run("radius-sweep", self._radius_sweep)

    def bounds1d(self) -> bool:
        return self._run("bounds1d", self._bounds1d)

    def compare(self) -> bool:
        return self._run("compare", self._compare)

    def run_in_background(self, method: Callable[[], bool], completion_callback=None) -> threading.Thread:
        """
        Execute one of the experiment methods in a separate thread.

        Args:
            method: Bound experiment method, e.g. ``workflow.monte_carlo``
            completion_callback: Function called with the success flag
        """
        def worker():
            try:
                success = method()
            except Exception as e:
                self._log_error(f"Background run failed: {e}")
                success = False
            if completion_callback:
                completion_callback(success)

        thread = threading.Thread(target=worker, daemon=True)
        thread.start()
        return thread

    # Internals

    def _run(self, name: str, body: Callable[[], None]) -> bool:
        if not self.output_dir:
            self._log_error("Output directory is not set")
            return False
        self._tables = {}
        self.results = {"command": name, "output_directory": str(self.output_dir)}
        try:
            self._log_info(f"Starting '{name}' (seed {self.config.experiment.seed})")
            body()
            save_config(self.config, self.output_dir / CONFIG_FILE)
            if self.write_excel and self._tables:
                write_excel_summary(self._tables, self.output_dir / EXCEL_FILE)
            self._generate_summary()
            return True
        except LocalizationError as e:
            self._log_error(f"'{name}' failed: {e}")
            return False
        except Exception as e:
            logger.exception(f"Unexpected error in '{name}'")
            self._log_error(f"Critical error in '{name}': {e}")
            return False

    def _get_instance(self) -> NetworkInstance:
        if self.instance is None:
            self.instance = resolve_instance(self.config)
            topology = self.instance.topology
            self._log_info(
                f"Network: n={topology.n}, m={topology.m}, |E|={topology.num_edges}, "
                f"anchor links={topology.num_links}, mean degree={mean_degree(topology):.2f}"
            )
        return self.instance

    def _write(self, name: str, df: pd.DataFrame, path_name: str, columns) -> pd.DataFrame:
        df = df[list(columns)]
        df.to_csv(self.output_dir / path_name, index=False)
        self._tables[name] = df
        self._log_info(f"Saved {path_name} ({len(df)} rows)")
        return df

    def _generate_instance(self):
        instance = self._get_instance()
        save_instance(instance, self.output_dir / INSTANCE_FILE)
        self.results["instance_file"] = str(self.output_dir / INSTANCE_FILE)

    def _solve_single(self, solver: str):
        instance = self._get_instance()
        save_instance(instance, self.output_dir / INSTANCE_FILE)
        plan = build_plan(self.config, instance, solver=solver)
        rng = trial_rng(plan.master_seed, 0)
        measurements, init_x = draw_trial_inputs(plan, rng)
        save_measurements(measurements, self.output_dir / MEASUREMENTS_FILE)

        x_hat, cost, iterations, broadcasts, result = solve_measurements(plan, measurements, init_x, rng)
        if solver == "async":
            df = write_async_trajectory(result.rows, self.output_dir / TRAJECTORY_FILE)
        else:
            df = write_sync_trajectory(result.trajectory_rows(), self.output_dir / TRAJECTORY_FILE)
        self._tables["trajectory"] = df
        save_estimate(x_hat, self.output_dir / ESTIMATE_FILE, seed=plan.master_seed)

        self.results.update(
            {
                "solver": solver,
                "loss": plan.loss,
                "final_cost": cost,
                "iterations": iterations,
                "broadcast_count": broadcasts,
                "positioning_error_m": positioning_error(x_hat, instance.true_positions),
                "init_error_m": positioning_error(np.asarray(init_x), instance.true_positions),
            }
        )

    def _progress(self, label: str):
        def report(done: int, total: int):
            step = max(total // 10, 1)
            if done % step == 0 or done == total:
                self._log_info(f"{label}: {done}/{total}")
        return report

    def _monte_carlo(self):
        outcome = run_monte_carlo(self.config, self._get_instance(), self._progress("Trials"))
        self._write("trials", outcome.trials_frame(), TRIALS_FILE, TRIAL_COLUMNS)
        self._write("cdf", outcome.cdf, CDF_FILE, CDF_COLUMNS)
        if outcome.summary["failed"]:
            self._log_warning(f"{outcome.summary['failed']} trial(s) diverged or failed, see {TRIALS_FILE}")
        self.results.update(outcome.summary)

    def _sweep(self):
        outcome = sweep_outlier_probability(self.config, instance=self._get_instance())
        self._write("sweep", outcome.rows, SWEEP_FILE, SWEEP_COLUMNS)
        self._write("sweep_trend", outcome.trend, SWEEP_TREND_FILE, SWEEP_TREND_COLUMNS)
        self.results["rows"] = len(outcome.rows)
        for _, row in outcome.trend.iterrows():
            self.results[f"non_decreasing_{row['solver']}"] = bool(row["non_decreasing"])
            if not row["non_decreasing"]:
                self._log_warning(f"{row['solver']}: mean error drops as the outlier probability grows")

    def _radius_sweep(self):
        df = sweep_huber_radius(self.config, instance=self._get_instance())
        self._write("radius_sweep", df, RADIUS_SWEEP_FILE, df.columns)
        self.results["rows"] = len(df)

    def _bounds1d(self):
        outcome = bounds_experiment_1d(
            self.config.bounds1d,
            self.config.experiment.seed,
            progress_callback=self._progress("Bounds trials"),
        )
        self._write("bounds", outcome.rows, BOUNDS_FILE, outcome.rows.columns)
        self._write("bounds_summary", outcome.summary, BOUNDS_SUMMARY_FILE, BOUNDS_SUMMARY_COLUMNS)
        for _, row in outcome.summary.iterrows():
            self.results[f"true_gap_{row['loss']}"] = float(row["true_gap"])

    def _compare(self):
        df = sync_vs_async_comm_matched(self.config, instance=self._get_instance())
        self._write("compare", df, COMPARE_FILE, df.columns)
        self.results["rows"] = len(df)

    def _generate_summary(self):
        """Log the run summary."""
        self._log_info("=" * 50)
        self._log_info(f"RUN SUMMARY: {self.results.get('command')}")
        for key, value in self.results.items():
            if key == "command":
                continue
            text = f"{value:.4f}" if isinstance(value, float) else str(value)
            self._log_info(f"{key}: {text}")
        self._log_info("=" * 50)

    def _log_info(self, message: str):
        """Log info message."""
        logger.info(message)
        if self.progress_callback:
            self.progress_callback(f"INFO: {message}")

    def _log_warning(self, message: str):
        """Log warning message."""
        logger.warning(message)
        if self.progress_callback:
            self.progress_callback(f"WARNING: {message}")

    def _log_error(self, message: str):
        """Log error message."""
        logger.error(message)
        if self.progress_callback:
            self.progress_callback(f"ERROR: {message}")

    def get_results(self) -> Dict[str, Any]:
        """Get results of the last run."""
        return self.results.copy()
