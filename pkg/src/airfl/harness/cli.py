"""Command line: ``airfl run|validate|bound <config>``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

from .config import ConfigError, load_config
from .runner import EXIT_ABORT, EXIT_INVALID, EXIT_OK, bound_report, run_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="airfl", description="Over-the-air federated learning experiments")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-run progress")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and write records")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (overrides output_dir)")
    _add_overrides(run)

    val = sub.add_parser("validate", help="check a configuration and print it resolved")
    val.add_argument("config")

    bound = sub.add_parser("bound", help="evaluate convergence bounds for a finished run")
    bound.add_argument("config")
    bound.add_argument("--out", help="directory holding the run outputs")
    _add_overrides(bound)
    return parser


def _add_overrides(parser):
    parser.add_argument("--seed", type=int, help="override the base seed")
    parser.add_argument("--reps", type=int, help="override the number of repetitions")


def _apply_overrides(cfg, args):
    changes, errors = {}, []
    if getattr(args, "seed", None) is not None:
        if args.seed < 0:
            errors.append(f"--seed: must be >= 0, got {args.seed}")
        changes["seed"] = args.seed
    if getattr(args, "reps", None) is not None:
        if args.reps < 1:
            errors.append(f"--reps: must be >= 1, got {args.reps}")
        changes["repetitions"] = args.reps
    if errors:
        raise ConfigError(errors)
    return dataclasses.replace(cfg, **changes) if changes else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID

    if args.command == "validate":
        print(json.dumps(cfg.resolved(), indent=2))
        return EXIT_OK
    try:
        if args.command == "run":
            status = run_experiment(cfg, args.out)
            if status != EXIT_OK:
                print("one or more scheme runs aborted; see the 'aborted' flags in records.csv",
                      file=sys.stderr)
            return status
        report = bound_report(cfg, args.out)
    except (OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ABORT
    for name, entry in report.items():
        for rep, row in entry["repetitions"].items():
            if "bound" in row:
                verdict = "holds" if row["holds"] else "VIOLATED"
                print(f"{name} rep {rep} [{entry['kind']}]: empirical {row['empirical']:.4g} "
                      f"<= bound {row['bound']:.4g}: {verdict}")
            elif "final" in row:
                print(f"{name} rep {rep} [{entry['kind']}]: envelope at T = {row['final']:.4g}")
            else:
                print(f"{name} rep {rep}: unavailable ({row['unavailable']})")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
