"""Gain tables of each segmented variant against its macroscopic baseline.

Reads sweeps written by run_sweeps.py and writes results/comparisons/<variant>_vs_<baseline>.csv.
"""

import argparse
from pathlib import Path

from wimarket.scenario import compare_runs, read_sweep, write_table

ROOT = Path(__file__).resolve().parent.parent

PAIRS = [
    (f"{scale}_{pop}_{variant}", f"{scale}_{pop}_L1")
    for scale in ("desk", "full")
    for pop in ("corr", "ind")
    for variant in ("L5", "L9", "L20", "p1L9", "p4L9")
] + [(f"{scale}_multiplan_{pop}_L9", f"{scale}_multiplan_{pop}_L1") for scale in ("desk", "full") for pop in ("corr", "ind")]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--results", default=str(ROOT / "results"))
    args = parser.parse_args()
    root = Path(args.results)
    out = root / "comparisons"
    out.mkdir(parents=True, exist_ok=True)
    for variant, baseline in PAIRS:
        if not (root / variant / "sweep.csv").exists() or not (root / baseline / "sweep.csv").exists():
            continue
        table = compare_runs(read_sweep(root / baseline), read_sweep(root / variant))
        write_table(table, out / f"{variant}_vs_{baseline}.csv")
        gains = [table[k] for k in table if k.startswith("revenue_") and k.endswith("_gain_pct")]
        print(f"{variant} vs {baseline}: revenue gain range "
              f"{min(g.min() for g in gains):+.2f}% .. {max(g.max() for g in gains):+.2f}%")


if __name__ == "__main__":
    main()
