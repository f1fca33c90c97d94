"""Solve the demand sweep of each config and write it under results/<config name>/."""

import argparse
import logging
import time
from pathlib import Path

from wimarket.scenario import ScenarioSpec, run_sweep, write_outcomes

ROOT = Path(__file__).resolve().parent.parent


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("configs", nargs="+", help="config names (without .json) or paths")
    parser.add_argument("--out", default=str(ROOT / "results"))
    parser.add_argument("--seed", type=int)
    parser.add_argument("--points", type=int)
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args()
    logging.basicConfig(level=logging.WARNING)

    for name in args.configs:
        path = Path(name) if name.endswith(".json") else ROOT / "configs" / f"{name}.json"
        spec = ScenarioSpec.load(path)
        if args.seed is not None:
            spec.seed = args.seed
        t0 = time.perf_counter()
        outcomes = run_sweep(spec, points=args.points, jobs=args.jobs)
        suffix = "" if args.seed is None else f"_seed{args.seed}"
        write_outcomes(outcomes, Path(args.out) / f"{spec.name}{suffix}", spec)
        status = [o.status for o in outcomes]
        print(f"{spec.name}{suffix}: {len(outcomes)} points in {time.perf_counter() - t0:.0f} s, "
              f"{status.count('global')} global, {status.count('local')} local, {status.count('failed')} failed")


if __name__ == "__main__":
    main()
