"""Pointwise Hamiltonian optimization over a box and sign-condition audits.

Three per-component update rules are available:

``clamp``
    H quadratic in the component.  One Newton step from the previous value
    gives the unconstrained optimizer exactly; it is then projected onto
    the interval.
``bang``
    H affine in the component.  The sign of the switching function
    ``sigma = H_u`` picks a bound; when ``|sigma|`` is below the singular
    tolerance the previous value is kept and the node flagged.
``scan``
    Anything else: bracketed golden-section search, compared against both
    endpoints.

The min/max distinction lives only here: for ``sense == "min"`` the
Hamiltonian is minimized and all sign conditions flip.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from pmp_sweep.expr import ExprError
from pmp_sweep.model import BoxBounds, OcpProblem

RULES = ("clamp", "bang", "scan")
LOWER, INTERIOR, UPPER = -1, 0, 1
ACTIVITY_NAMES = {LOWER: "lower", INTERIOR: "interior", UPPER: "upper"}


class ControlLawError(ValueError):
    pass


def clamp(v, lo, hi):
    if np.any(np.asarray(lo) > np.asarray(hi)):
        raise ValueError(f"clamp bounds reversed: lo={lo} > hi={hi}")
    out = np.minimum(hi, np.maximum(lo, v))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class ControlUpdateRule:
    kinds: tuple[str, ...]
    # per-component (lo, hi) search bracket for ``scan`` on unbounded sides
    brackets: tuple[tuple[float, float] | None, ...] | None = None
    singular_rtol: float = 1e-8

    def __post_init__(self):
        for k in self.kinds:
            if k not in RULES:
                raise ValueError(f"unknown control rule {k!r}; choose from {RULES}")


@dataclass(frozen=True)
class KktReport:
    """Per node and control component sign-condition record."""

    activity: np.ndarray  # (N, m) of LOWER / INTERIOR / UPPER
    dH_du: np.ndarray
    residual: np.ndarray
    singular: np.ndarray

    @property
    def max_residual(self) -> float:
        return float(self.residual.max()) if self.residual.size else 0.0

    def activity_names(self) -> np.ndarray:
        return np.vectorize(ACTIVITY_NAMES.get)(self.activity)


def _sign(p: OcpProblem) -> float:
    return 1.0 if p.sense == "max" else -1.0


def _hu_at(ev, t, X, U, Lam, k, values):
    V = U.copy()
    V[:, k] = values
    return ev.dH_du(t, X, V, Lam)[:, k]


def select_rule(p: OcpProblem, t, X, U, Lam, seed: int = 0) -> ControlUpdateRule:
    """Pick an update rule per control by probing H_u along the given nodes.

    The probe uses the supplied costates and a random costate draw so that
    structure hidden by a zero adjoint (first sweep) is still seen.
    """
    if p.control_rules is not None:
        return ControlUpdateRule(tuple(p.control_rules))
    ev = p.evaluator
    rng = np.random.default_rng(seed)
    t = np.broadcast_to(np.asarray(t, dtype=float), (X.shape[0],))
    probes = [Lam, Lam + rng.normal(size=Lam.shape)]
    kinds = []
    s = _sign(p)
    for k in range(p.m):
        kind = "bang"
        try:
            for L in probes:
                v0 = U[:, k]
                d = np.maximum(1.0, np.abs(v0))
                h0 = _hu_at(ev, t, X, U, L, k, v0)
                h1 = _hu_at(ev, t, X, U, L, k, v0 + d)
                h2 = _hu_at(ev, t, X, U, L, k, v0 + 2.0 * d)
                scale = 1.0 + np.max(np.abs(np.concatenate([h0, h1, h2])))
                d1, d2 = h1 - h0, h2 - h1
                if np.max(np.abs(d1)) <= 1e-12 * scale and np.max(np.abs(d2)) <= 1e-12 * scale:
                    continue
                if np.max(np.abs(d2 - d1)) <= 1e-9 * scale and np.all(s * d1 < 0):
                    kind = "clamp" if kind != "scan" else kind
                else:
                    kind = "scan"
        except (ExprError, FloatingPointError):
            kind = "scan"
        kinds.append(kind)
    return ControlUpdateRule(tuple(kinds))


def optimize_nodes(p: OcpProblem, t, X, Lam, rule: ControlUpdateRule, U_prev):
    """Vectorised pointwise optimizer at every node.

    Returns ``(U_opt, singular)``, both of shape (N, m).  Components are
    updated one at a time with the others held at ``U_prev``, which is exact
    for Hamiltonians separable in the controls.
    """
    ev = p.evaluator
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Lam = np.atleast_2d(np.asarray(Lam, dtype=float))
    U_prev = np.atleast_2d(np.asarray(U_prev, dtype=float))
    N = X.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=float), (N,))
    lo, hi = p.bounds.lo, p.bounds.hi
    s = _sign(p)
    U_opt = U_prev.copy()
    singular = np.zeros_like(U_prev, dtype=bool)
    for k, kind in enumerate(rule.kinds):
        a, b = lo[k], hi[k]
        if kind == "clamp":
            v0 = U_prev[:, k]
            # unit step, scaled up for large iterates so v0 + d != v0
            d = np.maximum(1.0, np.abs(v0))
            h0 = _hu_at(ev, t, X, U_prev, Lam, k, v0)
            curv = (_hu_at(ev, t, X, U_prev, Lam, k, v0 + d) - h0) / d
            bad = np.flatnonzero(~(s * curv < 0))
            if bad.size:
                i = int(bad[0])
                shape = "concave" if s > 0 else "convex"
                raise ControlLawError(
                    f"control {p.controls[k]!r}: Hamiltonian not strictly {shape} "
                    f"at node {i} (t={t[i]:.6g}, d2H/du2={curv[i]:.6g}); "
                    "use the 'scan' rule"
                )
            U_opt[:, k] = np.minimum(b, np.maximum(a, v0 - h0 / curv))
        elif kind == "bang":
            sigma = _hu_at(ev, t, X, U_prev, Lam, k, U_prev[:, k])
            tol = rule.singular_rtol * (1.0 + np.max(np.abs(sigma)))
            up = s * sigma > tol
            down = s * sigma < -tol
            if (np.any(up) and math.isinf(b)) or (np.any(down) and math.isinf(a)):
                raise ControlLawError(
                    f"unbounded pointwise optimum for control {p.controls[k]!r}: "
                    "Hamiltonian is affine and the bound in the improving direction is infinite"
                )
            col = U_prev[:, k].copy()
            col[up] = b
            col[down] = a
            U_opt[:, k] = col
            singular[:, k] = ~(up | down)
        else:
            U_opt[:, k] = _scan(p, t, X, Lam, U_prev, k, rule)
    return U_opt, singular


def _scan(p, t, X, Lam, U_prev, k, rule):
    lo, hi = p.bounds.lower[k], p.bounds.upper[k]
    if math.isinf(lo) or math.isinf(hi):
        br = rule.brackets[k] if rule.brackets else None
        if br is None:
            raise ControlLawError(
                f"scan rule on unbounded control {p.controls[k]!r} needs a search bracket"
            )
        lo, hi = max(lo, br[0]), min(hi, br[1])
    ev = p.evaluator
    s = _sign(p)
    N = X.shape[0]

    def score(v):
        V = U_prev.copy()
        V[:, k] = v
        return s * ev.hamiltonian(t, X, V, Lam)

    a = np.full(N, float(lo))
    b = np.full(N, float(hi))
    width = hi - lo
    if width == 0.0:
        return a
    g = (math.sqrt(5.0) - 1.0) / 2.0
    for _ in range(200):
        if np.max(b - a) <= 1e-10 * width:
            break
        c = b - g * (b - a)
        d = a + g * (b - a)
        fc, fd = score(c), score(d)
        keep_left = fc > fd
        keep_right = fd > fc
        tie = ~(keep_left | keep_right)
        # ties shrink symmetrically toward the middle of the bracket
        a, b = (
            np.where(keep_right, c, np.where(tie, c, a)),
            np.where(keep_left, d, np.where(tie, d, b)),
        )
    best = _polish(p, t, X, Lam, U_prev, k, a, b, lo, hi)
    f_best = score(best)
    for edge in (np.full(N, float(lo)), np.full(N, float(hi))):
        f_edge = score(edge)
        better = f_edge > f_best
        best = np.where(better, edge, best)
        f_best = np.where(better, f_edge, f_best)
    return best


def _polish(p, t, X, Lam, U_prev, k, a, b, lo, hi):
    """Refine golden-section brackets by bisection on the sign of H_u.

    Comparing H values cannot resolve the optimizer better than about
    sqrt(machine epsilon); the exact derivative can.  Nodes whose widened
    bracket does not straddle a sign change keep the bracket midpoint.
    """
    ev = p.evaluator
    s = _sign(p)
    pad = 1e-6 * (hi - lo)
    left = np.maximum(lo, a - pad)
    right = np.minimum(hi, b + pad)

    def slope(v):
        V = U_prev.copy()
        V[:, k] = v
        return s * ev.dH_du(t, X, V, Lam)[:, k]

    ok = (slope(left) > 0) & (slope(right) < 0)
    if not ok.any():
        return 0.5 * (a + b)
    for _ in range(60):
        mid = 0.5 * (left + right)
        up = slope(mid) > 0
        left = np.where(up, mid, left)
        right = np.where(up, right, mid)
    return np.where(ok, 0.5 * (left + right), 0.5 * (a + b))


def pointwise_optimize(
    p: OcpProblem, t: float, x, lam, rule: ControlUpdateRule | None = None, u_prev=None
) -> np.ndarray:
    """Optimizer of H(t, x, ., lam) over the box at a single point."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    lam = np.asarray(lam, dtype=float).reshape(1, -1)
    if x.shape[1] != p.n or lam.shape[1] != p.n:
        raise ValueError(f"x and lam must have {p.n} components")
    if u_prev is None:
        u_prev = p.bounds.default_control()
    U = np.asarray(u_prev, dtype=float).reshape(1, -1)
    if U.shape[1] != p.m:
        raise ValueError(f"u_prev must have {p.m} components")
    if rule is None:
        rule = select_rule(p, np.array([t]), x, U, lam)
    U_opt, _ = optimize_nodes(p, np.array([float(t)]), x, lam, rule, U)
    return U_opt[0]


def _activity(u, lo, hi, tol):
    width = hi - lo
    band = np.where(np.isfinite(width), tol * width, 0.0)
    at_lo = np.isfinite(lo) & (u - lo <= band)
    at_hi = np.isfinite(hi) & (hi - u <= band)
    act = np.full(np.shape(u), INTERIOR)
    act = np.where(at_lo, LOWER, act)
    act = np.where(at_hi & ~at_lo, UPPER, act)
    # a degenerate interval [a, a] satisfies both conditions trivially
    degenerate = at_lo & at_hi
    return act, degenerate


def _residual(sigma, act, degenerate, sense):
    s = 1.0 if sense == "max" else -1.0
    ss = s * sigma
    r = np.where(act == INTERIOR, np.abs(sigma), 0.0)
    r = np.where(act == LOWER, np.maximum(0.0, ss), r)
    r = np.where(act == UPPER, np.maximum(0.0, -ss), r)
    # + 0.0 turns -0.0 into 0.0 for printing
    return np.where(degenerate, 0.0, r) + 0.0


def normal_cone_residual(dH_du, u, bounds: BoxBounds, sense: str, tol: float = 1e-6) -> float:
    """Distance of H_u from the normal cone of the box at ``u`` (max over components)."""
    dH_du = np.asarray(dH_du, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    act, deg = _activity(u, bounds.lo, bounds.hi, tol)
    return float(np.max(_residual(dH_du, act, deg, sense)))


def sign_condition_audit(
    p: OcpProblem, traj, tol: float = 1e-6, rule: ControlUpdateRule | None = None
) -> KktReport:
    """Classify bound activity at every node and measure sign-condition violations."""
    if traj.lam is None:
        raise ValueError("sign-condition audit needs the adjoint trajectory")
    t = traj.grid.nodes
    sigma = p.evaluator.dH_du(t, traj.x, traj.u, traj.lam)
    act, deg = _activity(traj.u, p.bounds.lo, p.bounds.hi, tol)
    residual = _residual(sigma, act, deg, p.sense)
    if rule is None:
        rule = select_rule(p, t, traj.x, traj.u, traj.lam)
    singular = np.zeros_like(sigma, dtype=bool)
    for k, kind in enumerate(rule.kinds):
        if kind == "bang":
            col = np.abs(sigma[:, k])
            singular[:, k] = col <= rule.singular_rtol * (1.0 + col.max())
    return KktReport(activity=act, dH_du=sigma, residual=residual, singular=singular)
