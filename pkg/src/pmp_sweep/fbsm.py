"""Forward-backward sweep with projection inside the control update.

``sweep`` is the three-step fixed-point iteration (forward state, backward
adjoint, pointwise optimal control with damping).  ``solve`` wraps it in a
shooting loop over the terminal adjoints of fixed terminal states.
"""

from __future__ import annotations

import logging
from functools import lru_cache
from dataclasses import dataclass, replace

import numpy as np

from pmp_sweep import control_law as CL
from pmp_sweep.model import OcpProblem
from pmp_sweep.odeint import TimeGrid, Trajectory, quadrature, rk4_backward, rk4_forward, with_midpoints

log = logging.getLogger(__name__)


class ShootingError(RuntimeError):
    pass


@dataclass(frozen=True)
class SweepConfig:
    N: int = 1001
    damping: float = 0.5
    tol: float = 1e-8
    max_iterations: int = 500
    shooting_method: str = "secant"
    shooting_tol: float = 1e-8
    shooting_max_iterations: int = 50
    audit_tol: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.damping <= 1.0:
            raise ValueError(f"damping must lie in (0, 1], got {self.damping}")
        if self.N < 2:
            raise ValueError("grid needs at least 2 nodes")
        if self.shooting_method not in ("secant", "broyden"):
            raise ValueError(f"unknown shooting method {self.shooting_method!r}")


@dataclass(frozen=True)
class SweepResult:
    trajectory: Trajectory
    objective: float
    converged: bool
    iterations: int
    control_change_history: tuple[float, ...]
    kkt: CL.KktReport
    singular: np.ndarray
    rule: CL.ControlUpdateRule
    terminal_adjoint: np.ndarray
    # final x_i(t1) - target_i per fixed terminal state
    shooting_residuals: tuple[float, ...] = ()
    # infinity norm of the shooting residual per outer step
    shooting_history: tuple[float, ...] = ()

    fixed: tuple[int, ...] = ()

    @property
    def shooting_parameters(self) -> np.ndarray:
        """Terminal adjoints of the fixed terminal states."""
        return self.terminal_adjoint[list(self.fixed)]


def initial_control(p: OcpProblem, grid: TimeGrid, u_init=None) -> np.ndarray:
    """Nodal (N, m) control guess, projected into the box."""
    N, m = grid.N, p.m
    if u_init is None:
        U = np.tile(p.bounds.default_control(), (N, 1))
    elif callable(u_init):
        U = np.array([np.atleast_1d(u_init(t)) for t in grid.nodes], dtype=float).reshape(N, m)
    else:
        arr = np.asarray(u_init, dtype=float)
        if arr.ndim == 0 or arr.shape == (m,):
            U = np.tile(np.broadcast_to(arr, (m,)), (N, 1))
        elif arr.shape == (N, m) or arr.shape == (N,) and m == 1:
            U = arr.reshape(N, m).copy()
        else:
            raise ValueError(f"u_init shape {arr.shape} fits neither ({m},) nor ({N}, {m})")
    return p.bounds.project(U)


def forward_states(p: OcpProblem, grid: TimeGrid, U: np.ndarray) -> np.ndarray:
    ev = p.evaluator
    return rk4_forward(ev.rhs, p.boundary.initial, grid, U)


def backward_adjoint(p: OcpProblem, grid: TimeGrid, X, U, lam_final) -> np.ndarray:
    """Integrate lam' = -H_x backwards along the frozen (x, u).

    H_x = f_x + g_x^T lam is affine in lam, so its coefficients are
    tabulated once at every node and half step and the RK4 stages only
    index into the table.
    """
    th = grid.half_nodes
    f_x, _, g_x, _ = p.evaluator.partials(th, with_midpoints(X), with_midpoints(U))
    # row j of the table: (-f_x, -g_x^T) at half node j
    neg_fx = (-f_x).tolist()
    neg_gT = (-np.swapaxes(g_x, 1, 2)).tolist()
    t0, inv_hh = grid.t0, 2.0 / grid.h
    affine = _affine_map(p.n)

    def rhs(t, lam):
        j = int((t - t0) * inv_hh + 0.5)
        return affine(neg_fx[j], neg_gT[j], lam)

    return rk4_backward(rhs, lam_final, grid)


@lru_cache(maxsize=None)
def _affine_map(n: int):
    """Unrolled ``(c, G, y) -> c + G @ y`` on lists for an n-vector."""
    rows = ", ".join(
        "c[%d] + " % i + " + ".join("G[%d][%d] * y[%d]" % (i, j, j) for j in range(n))
        for i in range(n)
    )
    return eval(f"lambda c, G, y: [{rows}]")


def _terminal_adjoint(p: OcpProblem, x_final, override):
    lam = p.evaluator.terminal_grad(x_final)
    for i, v in enumerate(p.boundary.terminal):
        if v is not None:
            if override is None:
                raise ValueError(
                    f"state {p.states[i]!r} has a fixed terminal value; use solve() "
                    "so its terminal adjoint is found by shooting"
                )
            lam[i] = override[i]
    return lam


def objective_value(p: OcpProblem, traj: Trajectory) -> float:
    f = p.evaluator.running(traj.grid.nodes, traj.x, traj.u)
    return quadrature(f, traj.grid) + p.evaluator.terminal(traj.x[-1])


def sweep(
    p: OcpProblem,
    cfg: SweepConfig | None = None,
    u_init=None,
    *,
    terminal_adjoint=None,
    rule: CL.ControlUpdateRule | None = None,
) -> SweepResult:
    """Run the forward-backward sweep until the relative control change is below ``cfg.tol``.

    ``terminal_adjoint`` (length n) supplies lam(t1) for fixed terminal
    states; entries for free states are ignored in favour of the
    transversality condition.
    """
    cfg = cfg or SweepConfig()
    grid = TimeGrid(p.t0, p.t1, cfg.N)
    t = grid.nodes
    theta = cfg.damping
    U = initial_control(p, grid, u_init)
    history: list[float] = []
    best = (np.inf, U)
    converged = False
    singular = np.zeros_like(U, dtype=bool)
    k = 0
    for k in range(1, cfg.max_iterations + 1):
        X = forward_states(p, grid, U)
        lam_T = _terminal_adjoint(p, X[-1], terminal_adjoint)
        Lam = backward_adjoint(p, grid, X, U, lam_T)
        if rule is None:
            rule = CL.select_rule(p, t, X, U, Lam)
        U_tilde, singular = CL.optimize_nodes(p, t, X, Lam, rule, U)
        U_new = p.bounds.project(theta * U_tilde + (1.0 - theta) * U)
        change = float(np.abs(U_new - U).sum() / max(1.0, np.abs(U_new).sum()))
        history.append(change)
        U = U_new
        if change < best[0]:
            best = (change, U)
        if change <= cfg.tol:
            converged = True
            # report the pointwise-optimal control itself: the damped
            # iterate still trails it by roughly (1 - theta) / theta * change
            U = p.bounds.project(U_tilde)
            break
    if not converged:
        log.warning("sweep stopped after %d iterations (last change %.3g)", k, history[-1])
        U = best[1]
    X = forward_states(p, grid, U)
    lam_T = _terminal_adjoint(p, X[-1], terminal_adjoint)
    Lam = backward_adjoint(p, grid, X, U, lam_T)
    traj = Trajectory(grid, X, U, Lam)
    kkt = CL.sign_condition_audit(p, traj, cfg.audit_tol, rule)
    return SweepResult(
        trajectory=traj,
        objective=objective_value(p, traj),
        converged=converged,
        iterations=k,
        control_change_history=tuple(history),
        kkt=kkt,
        singular=singular,
        rule=rule,
        terminal_adjoint=lam_T,
        fixed=p.boundary.fixed_indices,
    )


def solve(p: OcpProblem, cfg: SweepConfig | None = None, u_init=None) -> SweepResult:
    """Sweep plus shooting on the terminal adjoints of fixed terminal states."""
    cfg = cfg or SweepConfig()
    fixed = list(p.boundary.fixed_indices)
    if not fixed:
        return sweep(p, cfg, u_init)
    targets = np.array([p.boundary.terminal[i] for i in fixed])
    # inner sweeps must be tighter than the shooting tolerance or the
    # residual map is too noisy to drive below it
    inner = replace(cfg, tol=min(cfg.tol, 1e-2 * cfg.shooting_tol))
    state = {"U": u_init, "rule": None, "result": None}

    def F(s):
        lam_T = np.zeros(p.n)
        lam_T[fixed] = s
        res = sweep(p, inner, state["U"], terminal_adjoint=lam_T, rule=state["rule"])
        state.update(U=res.trajectory.u, rule=res.rule, result=res)
        return res.trajectory.x[-1, fixed] - targets, res

    history: list[float] = []

    def record(r):
        history.append(float(np.max(np.abs(r))))
        if len(history) >= 6 and all(b >= a for a, b in zip(history[-6:], history[-5:])):
            raise ShootingError(
                f"shooting diverged: residual history {history[-6:]} is non-decreasing"
            )
        return history[-1] <= cfg.shooting_tol

    q = len(fixed)
    s = np.zeros(q)
    r, res = F(s)
    done = record(r)
    step = 1e-4 * (1.0 + np.abs(s))
    if not done and (q == 1 and cfg.shooting_method == "secant"):
        s_prev, r_prev = s, r
        s = s + step
        r, res = F(s)
        done = record(r)
        it = 0
        while not done and it < cfg.shooting_max_iterations:
            denom = r[0] - r_prev[0]
            if denom == 0.0:
                raise ShootingError("shooting residual is insensitive to the terminal adjoint")
            s_next = s - r * (s - s_prev) / denom
            s_prev, r_prev = s, r
            s = s_next
            r, res = F(s)
            done = record(r)
            it += 1
    elif not done:
        J = np.empty((q, q))
        for j in range(q):
            sj = s.copy()
            sj[j] += step[j]
            rj, _ = F(sj)
            J[:, j] = (rj - r) / step[j]
        it = 0
        while not done and it < cfg.shooting_max_iterations:
            try:
                ds = np.linalg.solve(J, -r)
            except np.linalg.LinAlgError:
                raise ShootingError("singular shooting Jacobian") from None
            s = s + ds
            r_new, res = F(s)
            J += np.outer((r_new - r) - J @ ds, ds) / (ds @ ds)
            r = r_new
            done = record(r)
            it += 1
    return replace(
        res,
        converged=res.converged and done,
        shooting_residuals=tuple(float(v) for v in r),
        shooting_history=tuple(history),
    )
