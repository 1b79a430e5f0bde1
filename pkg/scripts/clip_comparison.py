"""Projection inside the sweep versus clipping a finished unconstrained solution.

Runs the comparison on the saturated growth instance, where the adjoint does
not depend on the state and both routes coincide, and on the tracking
problem, where clipping afterwards lands on a different, worse control.

    python scripts/clip_comparison.py [--grid N]
"""

import argparse

from pmp_sweep.diagnostics import clip_comparison
from pmp_sweep.fbsm import SweepConfig
from pmp_sweep.registry import registry_get


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--grid", type=int, default=1001)
    args = ap.parse_args()
    cfg = SweepConfig(N=args.grid)
    for name in ("linear_growth_saturated", "tracking_saturated"):
        rep = clip_comparison(registry_get(name), cfg)
        print(f"== {name}")
        print(rep.summary())
        print()


if __name__ == "__main__":
    main()
