"""Error against grid size for the problems with closed-form solutions.

Controls live on the nodes and are averaged at half steps, so smooth
problems decay at second order even though the integrator is RK4.  The
double integrator has a linear optimal control and is exact to rounding.
The bang-bang harvest problem is first order at best, and erratic, because
the jump in the control falls between nodes.

    python scripts/grid_convergence.py
"""

import argparse
import math
import os
import sys

import numpy as np

from pmp_sweep.fbsm import SweepConfig, solve
from pmp_sweep.registry import registry_get

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "tests"))
import oracles as O  # noqa: E402

CASES = {
    "double_integrator": lambda tr: np.abs(tr.x[:, 0] - O.double_integrator(tr.t)[1]).max(),
    "lqr_scalar": lambda tr: np.abs(tr.x[:, 0] - O.lqr_scalar(tr.t)[1]).max(),
    "tracking_saturated": lambda tr: np.abs(tr.x[:, 0] - O.tracking_saturated(tr.t)[1]).max(),
    "harvest": lambda tr: abs(tr.x[-1, 0] - math.e),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--grids", default="26,51,101,201,401")
    args = ap.parse_args()
    grids = [int(n) for n in args.grids.split(",")]
    print(f"{'problem':<20}" + "".join(f"{n:>11}" for n in grids) + "   observed order")
    for name, err in CASES.items():
        errs = [err(solve(registry_get(name), SweepConfig(N=n)).trajectory) for n in grids]
        h = [1.0 / (n - 1) for n in grids]
        order = np.polyfit(np.log(h), np.log(np.maximum(errs, 1e-16)), 1)[0]
        print(f"{name:<20}" + "".join(f"{e:>11.2e}" for e in errs) + f"   {order:.2f}")


if __name__ == "__main__":
    main()
