"""Command-line entry point: run, sweep, and baseline subcommands."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .errors import ConfigError, EvaluationError, FederationFormatError
from .experiment import ExperimentConfig, load_config, run_baseline, run_experiment, sweep


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedsim",
        description="Deterministic federated-averaging simulator",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress details")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one federated experiment")
    run_p.add_argument("--config", required=True, help="experiment config JSON")
    run_p.add_argument("--seed", type=int, default=None, help="override master_seed")
    run_p.add_argument("--output-dir", default=None, help="override output directory")

    sweep_p = sub.add_parser("sweep", help="run a parameter-grid sweep")
    sweep_p.add_argument("--config", required=True, help="base experiment config JSON")
    sweep_p.add_argument("--grid", required=True, help="JSON mapping of dotted config paths to value lists")

    base_p = sub.add_parser("baseline", help="run the centralized baseline")
    base_p.add_argument("--config", required=True, help="experiment config JSON")
    return parser


def _load(args) -> ExperimentConfig:
    config = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        config = replace(config, master_seed=args.seed)
    if getattr(args, "output_dir", None) is not None:
        config = replace(config, output_dir=Path(args.output_dir))
    if config.output_dir is None:
        raise ConfigError("no output directory: set output_dir in the config or pass --output-dir")
    return config


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        if args.command == "run":
            report = run_experiment(_load(args)).report
            print(
                f"rounds_to_target={report['rounds_to_target']} "
                f"dev_metric={report['dev_metric']:.4f} "
                f"upload_mb_per_client={report['upload_mb_per_client']:.3f}"
            )
        elif args.command == "baseline":
            report = run_baseline(_load(args)).report
            print(
                f"steps_to_target={report['steps_to_target']} dev_metric={report['dev_metric']:.4f}"
            )
        else:
            config = _load(args)
            grid_path = Path(args.grid)
            try:
                grid = json.loads(grid_path.read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{grid_path}: invalid JSON ({exc.msg}, line {exc.lineno})") from None
            rows = sweep(config, grid)
            print(f"sweep complete: {len(rows)} rows -> {config.output_dir / 'sweep.csv'}")
    except (ConfigError, FederationFormatError, EvaluationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
