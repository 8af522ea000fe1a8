"""Command-line interface for popinfer."""

import argparse
import logging
import sys
from typing import List, Optional

from . import __version__
from .config import ExperimentConfig, bundled_config_names, load_bundled_config, resolve_config
from .core import init, set_run_id
from .errors import PopInferError
from .harness import diagnose, run_dogbone_study, run_single, run_sweep
from .reports import dumps_json

logger = logging.getLogger("popinfer.cli")


def create_parser() -> argparse.ArgumentParser:
    """Create the command-line argument parser."""
    parser = argparse.ArgumentParser(
        prog="popinfer",
        description="popinfer - Population-informed priors for Bayesian inference via data-consistent inversion",
    )
    parser.add_argument(
        "--version", action="version", version=f"popinfer {__version__}"
    )
    parser.add_argument(
        "--log-level", type=str, default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="Logging level"
    )
    parser.add_argument(
        "--json-logs", action="store_true", help="Write log records as JSON events to stderr"
    )

    subparsers = parser.add_subparsers(dest="command", help="Command to run")

    # Run command
    run_parser = subparsers.add_parser(
        "run", help="Run one realization of an experiment and write report.json"
    )
    run_parser.add_argument(
        "--config", type=str, required=True, help="Config file, or the name of a bundled config"
    )
    run_parser.add_argument(
        "--out", type=str, required=True, help="Output directory"
    )
    run_parser.add_argument(
        "--seed", type=int, help="Override the config seed"
    )

    # Sweep command
    sweep_parser = subparsers.add_parser(
        "sweep", help="Repeat an experiment over synthetic data realizations"
    )
    sweep_parser.add_argument(
        "--config", type=str, required=True, help="Config file, or the name of a bundled config"
    )
    sweep_parser.add_argument(
        "--out", type=str, required=True, help="Output directory"
    )
    sweep_parser.add_argument(
        "--realizations", type=int, help="Number of data realizations (overrides the config)"
    )
    sweep_parser.add_argument(
        "--seed", type=int, help="Override the config seed"
    )
    sweep_parser.add_argument(
        "--jobs", type=int, help="Parallel workers (joblib n_jobs)"
    )

    # Diagnose command
    diagnose_parser = subparsers.add_parser(
        "diagnose", help="Print the predictability spectrum or mean-ratio diagnostic"
    )
    diagnose_parser.add_argument(
        "--config", type=str, required=True, help="Config file, or the name of a bundled config"
    )
    diagnose_parser.add_argument(
        "--seed", type=int, help="Override the config seed"
    )

    # Dog-bone command
    dogbone_parser = subparsers.add_parser(
        "dogbone", help="Run the dog-bone tensile surrogate study"
    )
    dogbone_parser.add_argument(
        "--out", type=str, required=True, help="Output directory"
    )
    dogbone_parser.add_argument(
        "--seed", type=int, help="Override the config seed"
    )
    dogbone_parser.add_argument(
        "--samples", type=int, help="Number of initial samples (overrides the config)"
    )

    # Configs command
    subparsers.add_parser(
        "configs", help="List the bundled experiment configs"
    )

    return parser


def _load(reference: str, **overrides) -> ExperimentConfig:
    return resolve_config(reference).with_overrides(**overrides)


def execute(args: argparse.Namespace) -> int:
    """Run the selected command and return its exit code."""
    if args.command == "run":
        run_single(_load(args.config, seed=args.seed), args.out)
    elif args.command == "sweep":
        config = _load(args.config, seed=args.seed, n_realizations=args.realizations, n_jobs=args.jobs)
        run_sweep(config, args.out)
    elif args.command == "diagnose":
        result = diagnose(_load(args.config, seed=args.seed))
        print(dumps_json(result))
        if not result["satisfied"]:
            return 3
    elif args.command == "dogbone":
        config = load_bundled_config("dogbone").with_overrides(seed=args.seed, n_samples=args.samples)
        run_dogbone_study(config, args.out)
    elif args.command == "configs":
        for name in bundled_config_names():
            print(name)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for the CLI."""
    parser = create_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 2

    init(log_level=args.log_level, json_logs=args.json_logs)
    set_run_id()
    try:
        return execute(args)
    except PopInferError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
