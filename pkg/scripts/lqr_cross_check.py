"""Riccati gains against the generic sweep on the scalar LQR problem.

Reports, for several grids and horizons, the error of the Riccati solution
against its closed form and the gap between the feedback trajectory and the
sweep, plus the adjoint ansatz residual max |lambda - S x|.

    python scripts/lqr_cross_check.py
"""

import argparse
import math

import numpy as np

from pmp_sweep import lqr
from pmp_sweep.fbsm import SweepConfig, solve


def riccati_exact(t, T):
    e = np.exp(2 * (t - T))
    return (1 - e) / (1 + e)


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--horizons", default="0.5,1,2")
    ap.add_argument("--grids", default="51,201,1001")
    args = ap.parse_args()
    print(f"{'T':>5} {'N':>6} {'S error':>10} {'u gap':>10} {'ansatz':>10}")
    for T in map(float, args.horizons.split(",")):
        for N in map(int, args.grids.split(",")):
            p = lqr.scalar_example(T=T)
            sol = lqr.riccati_solve(p, N)
            traj = lqr.closed_loop(p, sol)
            s_err = np.abs(sol.S[:, 0, 0] - riccati_exact(traj.t, T)).max()
            res = solve(lqr.lqr_as_ocp(p), SweepConfig(N=N))
            gap = np.abs(res.trajectory.u - traj.u).max()
            ansatz = np.abs(res.trajectory.lam - np.einsum("nij,nj->ni", sol.S, res.trajectory.x)).max()
            print(f"{T:>5g} {N:>6} {s_err:>10.2e} {gap:>10.2e} {ansatz:>10.2e}")
    print(f"\nJ* (T = 1) = tanh(1) / 2 = {math.tanh(1) / 2:.12f}")


if __name__ == "__main__":
    main()
