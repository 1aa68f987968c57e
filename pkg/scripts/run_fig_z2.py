#!/usr/bin/env python3
"""Reproduce the d=2 epidemic dataset: simulate the fig-z2 preset (200
infected particles at the origin) and emit snapshots ready for plotting.

Usage: python scripts/run_fig_z2.py [--replicas N] [--seed S] [--out DIR]
"""

import argparse
import sys

from brw2.cli import main as cli_main


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--replicas", type=int, default=1)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", default="out/fig-z2")
    args = ap.parse_args()
    return cli_main(["simulate", "--preset", "fig-z2",
                     "--replicas", str(args.replicas), "--seed", str(args.seed),
                     "--out", args.out])


if __name__ == "__main__":
    sys.exit(main())
