"""
Entry point for the robust localization simulator.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

# Add src to Python path
src_path = Path(__file__).parent.parent
if str(src_path) not in sys.path:
    sys.path.insert(0, str(src_path))

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

COMMANDS = {
    "gen": "generate_instance",
    "solve-sync": "solve_sync",
    "solve-async": "solve_async",
    "mc": "monte_carlo",
    "sweep": "sweep",
    "radius-sweep": "radius_sweep",
    "bounds1d": "bounds1d",
    "compare": "compare",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robust-localization",
        description="Robust network localization with synchronous and asynchronous distributed solvers",
    )
    parser.add_argument("command", choices=sorted(COMMANDS), help="experiment to run")
    parser.add_argument("--config", type=Path, help="experiment JSON (defaults to the packaged scenario)")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--trials", type=int, help="Monte Carlo trial count")
    parser.add_argument("--radius-m", type=float, help="Huber radius for edges and anchor links (meters)")
    parser.add_argument("--loss", choices=["huber", "l2"], help="Huber relaxation or the quadratic baseline")
    parser.add_argument(
        "--edge-weight", choices=["duplicated", "exact"], help="asynchronous edge-term weighting"
    )
    parser.add_argument("--activations", type=int, help="asynchronous activation budget")
    parser.add_argument("--iters", type=int, help="synchronous iteration cap")
    parser.add_argument("--tol", type=float, help="synchronous stopping tolerance")
    parser.add_argument("--workers", type=int, help="threads running trials")
    parser.add_argument(
        "--clear", action="store_true", help="remove earlier csv/json/xlsx results from the output directory"
    )
    parser.add_argument("--excel", action="store_true", help="also write summary.xlsx")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    return parser


def config_overrides(args: argparse.Namespace) -> dict:
    """Map CLI flags to dotted configuration keys; unset flags map to None."""
    return {
        "experiment.seed": args.seed,
        "experiment.output_dir": str(args.out) if args.out else None,
        "experiment.trials": args.trials,
        "experiment.workers": args.workers,
        "radii.edge_radius_m": args.radius_m,
        "radii.anchor_radius_m": args.radius_m,
        "radii.loss": args.loss,
        "solver.edge_weight": args.edge_weight,
        "solver.activations": args.activations,
        "solver.max_iters": args.iters,
        "solver.stop_tol": args.tol,
        "bounds1d.trials": args.trials if args.command == "bounds1d" else None,
        "compare.trials": args.trials if args.command == "compare" else None,
        "compare.sync_iters": args.iters if args.command == "compare" else None,
        "compare.edge_weight": args.edge_weight if args.command == "compare" else None,
    }


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for the application."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)

    from robust_localization.config.settings import apply_overrides, load_config
    from robust_localization.core.workflow import ExperimentWorkflow
    from robust_localization.errors import LocalizationError
    from robust_localization.utils.file_utils import validate_file_path

    if args.config and not validate_file_path(args.config):
        logging.getLogger(__name__).error(f"Configuration file not found: {args.config}")
        return 1

    try:
        config = apply_overrides(load_config(args.config), config_overrides(args))
    except LocalizationError as e:
        logging.getLogger(__name__).error(f"Configuration error: {e}")
        return 1

    workflow = ExperimentWorkflow(config, write_excel=args.excel)
    if not workflow.set_output_dir(Path(config.experiment.output_dir), clear=args.clear):
        return 1

    if not getattr(workflow, COMMANDS[args.command])():
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
