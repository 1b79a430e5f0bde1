"""Sweep iterations and final change against the damping factor.

    python scripts/damping_study.py [--grid N] [--problems a,b,...]
"""

import argparse

import numpy as np

from pmp_sweep.fbsm import SweepConfig, solve
from pmp_sweep.registry import registry_get

DEFAULT = "linear_growth,tracking_saturated,lqr_scalar,harvest"


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--grid", type=int, default=501)
    ap.add_argument("--problems", default=DEFAULT)
    args = ap.parse_args()
    thetas = (0.1, 0.25, 0.5, 0.75, 1.0)
    print(f"{'problem':<22}" + "".join(f"  theta={th:<5}" for th in thetas))
    for name in args.problems.split(","):
        cells = []
        for th in thetas:
            res = solve(registry_get(name), SweepConfig(N=args.grid, damping=th, max_iterations=300))
            last = res.control_change_history[-1] if res.control_change_history else np.nan
            cells.append(f"{res.iterations:>4}" + ("  " if res.converged else "* ") + f"{last:.0e}")
        print(f"{name:<22}" + "".join(f"  {c:<11}" for c in cells))
    print("\n* = not converged within 300 iterations; columns: iterations, last change")


if __name__ == "__main__":
    main()
