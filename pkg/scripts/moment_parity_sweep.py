#!/usr/bin/env python3
"""Route-parity table: Fourier fast path vs truncated-box ODE oracle for the
first and second moments across the (b, c) case configurations.

Usage: python scripts/moment_parity_sweep.py [--box L] [--times 0.5,1,2,5]
"""

import argparse

import numpy as np

from brw2.branching import BranchingLaw, TwoTypeModel
from brw2.lattice import simple_kernel, uniform_range_kernel
from brw2.moments import (first_moment_field, first_moment_ode_oracle,
                          second_moment_field, second_moment_ode_oracle)

CASES = {
    "b=0,c=0": BranchingLaw(mu1=0.3, mu2=0.2, beta1={(2, 0): 0.2},
                            beta2={(0, 2): 0.15}),
    "b=0,c>0": BranchingLaw(mu1=0.3, mu2=0.15, beta1={(2, 0): 0.2},
                            beta2={(1, 1): 0.25}),
    "b>0,c=0": BranchingLaw(mu1=0.25, mu2=0.3, beta1={(1, 1): 0.25},
                            beta2={(0, 2): 0.2}),
    "b>0,c>0": BranchingLaw(mu1=0.25, mu2=0.375,
                            beta1={(2, 0): 0.125, (1, 1): 0.125},
                            beta2={(0, 2): 0.125, (1, 1): 0.25}),
    "bc=1e-8": BranchingLaw(mu1=0.2, mu2=0.1, beta1={(1, 1): 1e-4},
                            beta2={(1, 1): 1e-4}),
}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--box", type=int, default=30)
    ap.add_argument("--times", default="0.5,1,2,5")
    args = ap.parse_args()
    times = [float(t) for t in args.times.split(",")]
    k1, k2 = simple_kernel(1), uniform_range_kernel(1, 2)
    print(f"{'case':>10} {'t':>5} {'|d m1|_inf':>12} {'rel d m2':>12} {'flux':>9}")
    for name, law in CASES.items():
        model = TwoTypeModel(k1, k2, 1.0, 1.0, law)
        o1 = first_moment_ode_oracle(model, times, args.box)
        o2 = second_moment_ode_oracle(model, times, args.box)
        for f1o, f2o in zip(o1, o2):
            f1 = first_moment_field(model, f1o.t, args.box)
            f2 = second_moment_field(model, f2o.t, args.box)
            d1 = np.abs(f1.values - f1o.values).max()
            d2 = (np.abs(f2.values - f2o.values) / (np.abs(f2o.values) + 1e-8)).max()
            print(f"{name:>10} {f1o.t:>5.1f} {d1:>12.2e} {d2:>12.2e} "
                  f"{f2o.boundary_mass:>9.1e}")


if __name__ == "__main__":
    main()
