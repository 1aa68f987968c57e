#!/usr/bin/env python3
"""Reproduce the d=1 clustering dataset: simulate the fig-z1 preset and emit
history/snapshot CSVs plus cluster/gap statistics.

Usage: python scripts/run_fig_z1.py [--replicas N] [--seed S] [--out DIR]
"""

import argparse
import sys

from brw2.cli import main as cli_main


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--replicas", type=int, default=4)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", default="out/fig-z1")
    args = ap.parse_args()
    rc = cli_main(["simulate", "--preset", "fig-z1",
                   "--replicas", str(args.replicas), "--seed", str(args.seed),
                   "--out", args.out])
    if rc:
        return rc
    return cli_main(["clusters", "--preset", "fig-z1",
                     "--replicas", str(args.replicas), "--seed", str(args.seed),
                     "--out", args.out])


if __name__ == "__main__":
    sys.exit(main())
