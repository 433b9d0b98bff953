#!/usr/bin/env python3
"""Catch-up threshold analysis over the bundled benchmark score grids.

Prints the n* matrix (smallest corpus scale where each model tier meets
the next tier's single-shard baseline) for nq, triviaqa and webq, and
optionally writes the full report files:

    python scripts/catchup_report.py --out analysis/
"""

import argparse
import sys
from pathlib import Path

from ragscale.experiment import analyze_grids, report
from ragscale.fixtures import BUNDLED_DATASETS, MODEL_LADDER, load_bundled


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, help="write per-dataset report files here")
    args = parser.parse_args()

    pairs = list(zip(MODEL_LADDER, MODEL_LADDER[1:]))
    header = "pair".ljust(14) + "".join(name.ljust(10) for name in BUNDLED_DATASETS)
    print(header)
    matrices = {}
    for dataset in BUNDLED_DATASETS:
        f1_grid, em_grid = load_bundled(dataset)
        analysis = analyze_grids(f1_grid, em_grid, MODEL_LADDER, dataset=dataset)
        matrices[dataset] = analysis
    for small, large in pairs:
        row = f"{small} -> {large}".ljust(14)
        for dataset in BUNDLED_DATASETS:
            n_star = matrices[dataset].catchup[(small, large)]
            row += str(n_star if n_star is not None else "-").ljust(10)
        print(row)

    if args.out:
        for dataset, analysis in matrices.items():
            for path in report(analysis, args.out / dataset):
                print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
