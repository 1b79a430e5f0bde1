"""Post-solve analysis: switching functions, bound-activity phases,
objective evaluation and the projected-versus-clipped comparison.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from pmp_sweep import control_law as CL
from pmp_sweep import fbsm
from pmp_sweep.model import BoxBounds, OcpProblem
from pmp_sweep.odeint import IntegrationError, Trajectory

log = logging.getLogger(__name__)


def switching_function(p: OcpProblem, traj: Trajectory) -> np.ndarray:
    """sigma_k(t_i) = dH/du_k along the trajectory, shape (N, m)."""
    if traj.lam is None:
        raise ValueError("switching function needs the adjoint trajectory")
    return p.evaluator.dH_du(traj.t, traj.x, traj.u, traj.lam)


def sign_changes(t, sigma) -> np.ndarray:
    """Zero crossings of a sampled function, located by linear interpolation.

    Exact zeros at nodes count once; a run of zeros is reported at its
    first node only if the sign differs on either side.
    """
    t = np.asarray(t, dtype=float)
    s = np.asarray(sigma, dtype=float)
    out = []
    nz = np.flatnonzero(s != 0.0)
    for a, b in zip(nz[:-1], nz[1:]):
        if np.sign(s[a]) == np.sign(s[b]):
            continue
        if b == a + 1:
            out.append(t[a] - s[a] * (t[b] - t[a]) / (s[b] - s[a]))
        else:
            out.append(t[a + 1])
    return np.array(out)


def is_singular(sigma, rtol: float = 1e-8) -> bool:
    """True when the switching function vanishes (to ``rtol``) at every node."""
    sigma = np.asarray(sigma, dtype=float)
    return bool(np.all(np.abs(sigma) <= rtol * (1.0 + np.abs(sigma).max())))


@dataclass(frozen=True)
class Segment:
    t_start: float
    t_end: float
    activity: str


@dataclass(frozen=True)
class PhaseSegmentation:
    segments: tuple[tuple[Segment, ...], ...]  # one tuple per control

    def __getitem__(self, k) -> tuple[Segment, ...]:
        return self.segments[k]

    def as_rows(self):
        for k, segs in enumerate(self.segments):
            for s in segs:
                yield k, s.t_start, s.t_end, s.activity


def _label(act: int, singular: bool) -> str:
    if singular and act == CL.INTERIOR:
        return "singular"
    return CL.ACTIVITY_NAMES[act]


def _crossing(t, u, i, bound, interior_side):
    """Time where the interior side, extended linearly, reaches ``bound``.

    ``i`` and ``i + 1`` are the nodes on either side of the change; the
    estimate is clamped into ``[t_i, t_{i+1}]``.
    """
    lo_t, hi_t = t[i], t[i + 1]
    if interior_side == "right" and i + 2 < len(t):
        j, k = i + 1, i + 2
    elif interior_side == "left" and i - 1 >= 0:
        j, k = i - 1, i
    else:
        return 0.5 * (lo_t + hi_t)
    slope = (u[k] - u[j]) / (t[k] - t[j])
    if slope == 0.0 or not np.isfinite(bound):
        return 0.5 * (lo_t + hi_t)
    tc = t[j] + (bound - u[j]) / slope
    return float(min(hi_t, max(lo_t, tc)))


def segment_phases(
    traj: Trajectory, bounds: BoxBounds, tol: float = 1e-6, singular=None
) -> PhaseSegmentation:
    """Split the horizon into maximal runs of equal bound activity per control.

    Boundaries between a bound and the interior are placed where the
    interior values, extended linearly, meet the bound; other changes
    (bound to bound, singular flags) are placed midway.  A bound reached
    only at the first or last node counts as a touch.  Segments that end up
    with zero length are dropped and equal neighbours merged.
    """
    t = traj.t
    act, _ = CL._activity(traj.u, bounds.lo, bounds.hi, tol)
    sing = np.zeros_like(act, dtype=bool) if singular is None else np.asarray(singular, dtype=bool)
    out = []
    for k in range(traj.u.shape[1]):
        u = traj.u[:, k]
        labels = [_label(a, s) for a, s in zip(act[:, k], sing[:, k])]
        # a lone endpoint node on a bound is a touch, not a phase
        if len(labels) > 2:
            for end, nb in ((0, 1), (-1, -2)):
                if labels[end] in ("lower", "upper") and labels[nb] != labels[end]:
                    labels[end] = labels[nb]
        cuts = [float(t[0])]
        names = [labels[0]]
        for i in range(len(t) - 1):
            a, b = labels[i], labels[i + 1]
            if a == b:
                continue
            if a in ("lower", "upper") and b == "interior":
                bound = bounds.lower[k] if a == "lower" else bounds.upper[k]
                tc = _crossing(t, u, i, bound, "right")
            elif b in ("lower", "upper") and a == "interior":
                bound = bounds.lower[k] if b == "lower" else bounds.upper[k]
                tc = _crossing(t, u, i, bound, "left")
            else:
                tc = 0.5 * (t[i] + t[i + 1])
            cuts.append(max(tc, cuts[-1]))
            names.append(b)
        cuts.append(float(t[-1]))
        # drop slivers (e.g. a single terminal node on a bound), then stitch
        eps = 1e-9 * (t[-1] - t[0])
        kept = [(s, e, name) for (s, e), name in zip(zip(cuts[:-1], cuts[1:]), names) if e - s > eps]
        segs: list[Segment] = []
        for s, e, name in kept:
            start = segs[-1].t_end if segs else float(t[0])
            if segs and segs[-1].activity == name:
                segs[-1] = Segment(segs[-1].t_start, float(e), name)
            else:
                segs.append(Segment(start, float(e), name))
        segs[-1] = Segment(segs[-1].t_start, float(t[-1]), segs[-1].activity)
        out.append(tuple(segs))
    return PhaseSegmentation(tuple(out))


def objective(p: OcpProblem, traj: Trajectory) -> float:
    """Quadrature of the running payoff over the nodes plus the terminal payoff."""
    return fbsm.objective_value(p, traj)


@dataclass(frozen=True)
class ComparisonReport:
    J_projected: float
    J_clipped: float
    # J_projected - J_clipped, negated for minimization: >= 0 favours projection
    gap: float
    max_control_difference: float
    kkt_projected: float
    kkt_clipped: float
    # maxima restricted to nodes where either candidate sits on a bound
    kkt_projected_saturated: float
    kkt_clipped_saturated: float
    saturated_nodes: int
    vacuous: bool
    route_b_available: bool = True
    route_b_error: str = ""
    projected: fbsm.SweepResult | None = None
    clipped: Trajectory | None = None

    def summary(self) -> str:
        lines = [
            f"J projected            {self.J_projected:.12g}",
            f"J clipped              {self.J_clipped:.12g}",
            f"gap                    {self.gap:.6g}",
            f"max |u_A - u_B|        {self.max_control_difference:.6g}",
            f"KKT projected (all)    {self.kkt_projected:.6g}",
            f"KKT clipped (all)      {self.kkt_clipped:.6g}",
            f"KKT projected (sat.)   {self.kkt_projected_saturated:.6g}",
            f"KKT clipped (sat.)     {self.kkt_clipped_saturated:.6g}",
            f"saturated nodes        {self.saturated_nodes}",
            f"vacuous                {self.vacuous}",
        ]
        if not self.route_b_available:
            lines.append(f"route B unavailable: {self.route_b_error}")
        return "\n".join(lines)


def clip_candidate(p: OcpProblem, unconstrained: fbsm.SweepResult) -> Trajectory:
    """Clamp a finished control into the box and re-simulate state and adjoint."""
    grid = unconstrained.trajectory.grid
    U = p.bounds.project(unconstrained.trajectory.u)
    X = fbsm.forward_states(p, grid, U)
    lam_T = fbsm._terminal_adjoint(p, X[-1], unconstrained.terminal_adjoint)
    Lam = fbsm.backward_adjoint(p, grid, X, U, lam_T)
    return Trajectory(grid, X, U, Lam)


def clip_comparison(p: OcpProblem, cfg: fbsm.SweepConfig | None = None) -> ComparisonReport:
    """Projection inside the sweep (route A) against clamping a finished
    unconstrained solution (route B), both judged on the constrained problem."""
    cfg = cfg or fbsm.SweepConfig()
    res_a = fbsm.solve(p, cfg)
    traj_a = res_a.trajectory
    kkt_a = res_a.kkt
    saturated = kkt_a.activity != CL.INTERIOR
    n_sat = int(saturated.any(axis=1).sum())
    sign = 1.0 if p.sense == "max" else -1.0

    def sat_max(residual):
        return float(residual[saturated].max()) if saturated.any() else 0.0

    free = replace(p, bounds=BoxBounds.unbounded(p.m))
    try:
        res_free = fbsm.solve(free, cfg)
        traj_b = clip_candidate(p, res_free)
    except (IntegrationError, fbsm.ShootingError, CL.ControlLawError, ArithmeticError) as exc:
        log.warning("unconstrained solve failed: %s", exc)
        return ComparisonReport(
            J_projected=res_a.objective,
            J_clipped=float("nan"),
            gap=float("nan"),
            max_control_difference=float("nan"),
            kkt_projected=kkt_a.max_residual,
            kkt_clipped=float("nan"),
            kkt_projected_saturated=sat_max(kkt_a.residual),
            kkt_clipped_saturated=float("nan"),
            saturated_nodes=n_sat,
            vacuous=n_sat == 0,
            route_b_available=False,
            route_b_error=str(exc),
            projected=res_a,
        )
    kkt_b = CL.sign_condition_audit(p, traj_b, cfg.audit_tol, res_a.rule)
    saturated = saturated | (kkt_b.activity != CL.INTERIOR)
    J_b = objective(p, traj_b)
    return ComparisonReport(
        J_projected=res_a.objective,
        J_clipped=J_b,
        gap=sign * (res_a.objective - J_b),
        max_control_difference=float(np.abs(traj_a.u - traj_b.u).max()),
        kkt_projected=kkt_a.max_residual,
        kkt_clipped=kkt_b.max_residual,
        kkt_projected_saturated=sat_max(kkt_a.residual),
        kkt_clipped_saturated=sat_max(kkt_b.residual),
        saturated_nodes=n_sat,
        vacuous=n_sat == 0,
        projected=res_a,
        clipped=traj_b,
    )
