"""Command-line entry point: run a sweep, compare two sweeps, validate a config."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .scenario import ConfigError, ScenarioSpec, compare_runs, read_sweep, run_sweep, write_outcomes, write_table


def _run(args) -> int:
    spec = ScenarioSpec.load(args.config)
    if args.seed is not None:
        spec.seed = args.seed
    outcomes = run_sweep(spec, points=args.points, jobs=args.jobs)
    path = write_outcomes(outcomes, args.out, spec)
    failed = sum(o.status == "failed" for o in outcomes)
    print(f"{len(outcomes)} points written to {path} ({failed} failed)")
    return 0


def _compare(args) -> int:
    table = compare_runs(read_sweep(args.baseline), read_sweep(args.variant))
    sys.stdout.write(write_table(table, args.out))
    return 0


def _validate(args) -> int:
    try:
        spec = ScenarioSpec.load(args.config)
    except (ConfigError, json.JSONDecodeError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 1
    print(f"ok: {spec.name} ({spec.n_providers} providers, {spec.groups} groups)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wimarket", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="solve a demand sweep")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--points", type=int)
    run.add_argument("--jobs", type=int, default=1)
    run.set_defaults(func=_run)

    cmp = sub.add_parser("compare", help="gains of a variant sweep over a baseline")
    cmp.add_argument("--baseline", required=True)
    cmp.add_argument("--variant", required=True)
    cmp.add_argument("--out", help="also write the table to this CSV file")
    cmp.set_defaults(func=_compare)

    val = sub.add_parser("validate", help="check a config file against the schema")
    val.add_argument("--config", required=True)
    val.set_defaults(func=_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
