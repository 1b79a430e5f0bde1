"""Optimal control problem data model and Hamiltonian evaluation.

Problems are Bolza problems

    J(u) = int_{t0}^{t1} f(t, x, u) dt + phi(x(t1)),   x' = g(t, x, u),

with box-constrained controls.  The Hamiltonian ``H = f + lam . g`` is the
same for both senses; only the pointwise optimizer (see
:mod:`pmp_sweep.control_law`) looks at ``sense``.

Each of ``f``, ``g_i`` and ``phi`` is either an expression (``ExprNode`` or
source text) or a Python callable.  Callables for ``f`` and ``g_i`` take
``(t, x, u)`` with the component index on the *last* axis of ``x`` and ``u``
and must broadcast over leading axes; ``phi`` takes ``x`` alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence, Union

import numpy as np

from pmp_sweep import expr as E
from pmp_sweep.expr import ExprNode

Term = Union[ExprNode, Callable]


@dataclass(frozen=True)
class BoxBounds:
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi):
            raise ValueError("lower and upper bounds differ in length")
        for k, (a, b) in enumerate(zip(lo, hi)):
            if math.isnan(a) or math.isnan(b) or a > b:
                raise ValueError(f"control {k}: lower bound {a} exceeds upper bound {b}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unbounded(cls, m: int) -> "BoxBounds":
        return cls((-math.inf,) * m, (math.inf,) * m)

    @property
    def m(self) -> int:
        return len(self.lower)

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.upper)

    def project(self, u):
        return np.minimum(self.hi, np.maximum(self.lo, u))

    def default_control(self) -> np.ndarray:
        """Box midpoint, with 0 (pushed into the box) for unbounded sides."""
        lo, hi = self.lo, self.hi
        finite = np.isfinite(lo) & np.isfinite(hi)
        mid = np.where(finite, 0.5 * (np.where(finite, lo, 0.0) + np.where(finite, hi, 0.0)), 0.0)
        return np.minimum(hi, np.maximum(lo, mid))


@dataclass(frozen=True)
class BoundarySpec:
    """Initial values plus per-state terminal condition (``None`` = free)."""

    initial: tuple[float, ...]
    terminal: tuple[float | None, ...] | None = None

    def __post_init__(self):
        init = tuple(float(v) for v in self.initial)
        term = self.terminal if self.terminal is not None else (None,) * len(init)
        term = tuple(None if v is None else float(v) for v in term)
        if len(term) != len(init):
            raise ValueError("one terminal condition per state component is required")
        object.__setattr__(self, "initial", init)
        object.__setattr__(self, "terminal", term)

    @property
    def fixed_indices(self) -> tuple[int, ...]:
        return tuple(i for i, v in enumerate(self.terminal) if v is not None)


@dataclass(frozen=True)
class OcpProblem:
    states: tuple[str, ...]
    controls: tuple[str, ...]
    dynamics: tuple[Term, ...]
    running: Term
    boundary: BoundarySpec
    t0: float = 0.0
    t1: float = 1.0
    sense: str = "max"
    terminal: Term | None = None
    bounds: BoxBounds | None = None
    name: str = ""
    # optional analytic (H_x, H_u) for callback problems: fn(t, x, u, lam)
    hamiltonian_partials: Callable | None = field(default=None, compare=False)
    # per-control update rule names; None selects automatically
    control_rules: tuple[str, ...] | None = None

    def __post_init__(self):
        s = object.__setattr__
        s(self, "states", tuple(self.states))
        s(self, "controls", tuple(self.controls))
        s(self, "dynamics", tuple(_as_term(g) for g in self.dynamics))
        s(self, "running", _as_term(self.running))
        s(self, "terminal", None if self.terminal is None else _as_term(self.terminal))
        s(self, "t0", float(self.t0))
        s(self, "t1", float(self.t1))
        if self.bounds is None:
            s(self, "bounds", BoxBounds.unbounded(self.m))
        if isinstance(self.boundary, (tuple, list)):
            s(self, "boundary", BoundarySpec(self.boundary))
        self.validate()

    @property
    def n(self) -> int:
        return len(self.states)

    @property
    def m(self) -> int:
        return len(self.controls)

    def validate(self) -> None:
        if not self.t0 < self.t1:
            raise ValueError(f"need t0 < t1, got t0={self.t0}, t1={self.t1}")
        if self.sense not in ("max", "min"):
            raise ValueError(f"sense must be 'max' or 'min', got {self.sense!r}")
        names = ("t",) + self.states + self.controls
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate names among t, states, controls: {names}")
        if len(self.dynamics) != self.n:
            raise ValueError(f"{len(self.dynamics)} dynamics components for {self.n} states")
        if self.bounds.m != self.m:
            raise ValueError(f"bounds have dimension {self.bounds.m}, expected {self.m}")
        if len(self.boundary.initial) != self.n:
            raise ValueError(f"boundary has {len(self.boundary.initial)} states, expected {self.n}")
        for label, term in [("running payoff", self.running)] + [
            (f"dynamics of {s}", g) for s, g in zip(self.states, self.dynamics)
        ]:
            if isinstance(term, ExprNode):
                E.check_bindable(term, names, label)
        if isinstance(self.terminal, ExprNode):
            E.check_bindable(self.terminal, ("t",) + self.states, "terminal payoff")

    @cached_property
    def evaluator(self) -> "Evaluator":
        return Evaluator(self)


def _as_term(obj) -> Term:
    if isinstance(obj, str):
        return E.parse(obj)
    if isinstance(obj, (int, float)):
        return E.const(obj) if obj >= 0 else E.neg(E.const(-obj))
    if isinstance(obj, ExprNode) or callable(obj):
        return obj
    raise TypeError(f"cannot use {obj!r} as a problem term")


def fd_step(v):
    return np.maximum(1e-6, 1e-6 * np.abs(v))


class Evaluator:
    """Vectorised evaluation of a problem's terms and their first partials.

    Arrays follow the layout ``t: (N,)``, ``X: (N, n)``, ``U: (N, m)``.
    """

    def __init__(self, p: OcpProblem):
        self.p = p
        self.argnames = ("t",) + p.states + p.controls
        terms = (p.running,) + p.dynamics
        self.all_expr = all(isinstance(g, ExprNode) for g in terms)
        if all(isinstance(g, ExprNode) for g in p.dynamics):
            self._rhs = E.compile_exprs(p.dynamics, self.argnames)
        else:
            self._rhs = None

    # -- values ---------------------------------------------------------
    def _bindings(self, t, X, U):
        N = X.shape[0]
        b = {"t": np.broadcast_to(np.asarray(t, dtype=float), (N,))}
        for i, s in enumerate(self.p.states):
            b[s] = X[:, i]
        for k, c in enumerate(self.p.controls):
            b[c] = U[:, k]
        return b

    def _term_values(self, term, t, X, U) -> np.ndarray:
        N = X.shape[0]
        if isinstance(term, ExprNode):
            out = E.eval_batch(term, self._bindings(t, X, U)).value
        else:
            out = term(np.broadcast_to(np.asarray(t, dtype=float), (N,)), X, U)
        return np.broadcast_to(np.asarray(out, dtype=float), (N,)).copy()

    def running(self, t, X, U) -> np.ndarray:
        return self._term_values(self.p.running, t, X, U)

    def dynamics(self, t, X, U) -> np.ndarray:
        return np.stack([self._term_values(g, t, X, U) for g in self.p.dynamics], axis=1)

    def rhs(self, t: float, x, u) -> np.ndarray:
        """Single-point dynamics, the hot path of forward integration."""
        if self._rhs is not None:
            try:
                return self._rhs(t, *x, *u)
            except (ValueError, ZeroDivisionError, OverflowError):
                # re-run through the checked evaluator for a useful message
                b = dict(zip(self.argnames, (t, *x, *u)))
                for g in self.p.dynamics:
                    E.eval(g, b)
                raise
        return self.dynamics(t, np.atleast_2d(x), np.atleast_2d(u))[0]

    def terminal(self, x) -> float:
        phi = self.p.terminal
        if phi is None:
            return 0.0
        x = np.asarray(x, dtype=float)
        if isinstance(phi, ExprNode):
            b = {"t": self.p.t1, **dict(zip(self.p.states, x))}
            return E.eval(phi, b)
        return float(phi(x))

    def terminal_grad(self, x) -> np.ndarray:
        phi = self.p.terminal
        x = np.asarray(x, dtype=float)
        n = self.p.n
        if phi is None:
            return np.zeros(n)
        if isinstance(phi, ExprNode):
            b = {"t": self.p.t1, **dict(zip(self.p.states, x))}
            return np.array([E.eval_dual(phi, b, s).derivative for s in self.p.states])
        grad = np.empty(n)
        for i in range(n):
            h = fd_step(x[i])
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            grad[i] = (phi(xp) - phi(xm)) / (2 * h)
        return grad

    # -- partials -------------------------------------------------------
    def _term_grads(self, term, t, X, U):
        """Return (d/dx: (N, n), d/du: (N, m)) of one scalar term."""
        N, n, m = X.shape[0], self.p.n, self.p.m
        dX, dU = np.empty((N, n)), np.empty((N, m))
        if isinstance(term, ExprNode):
            b = self._bindings(t, X, U)
            used = E.variables(term)
            for i, s in enumerate(self.p.states):
                dX[:, i] = E.eval_batch(term, b, s).derivative if s in used else 0.0
            for k, c in enumerate(self.p.controls):
                dU[:, k] = E.eval_batch(term, b, c).derivative if c in used else 0.0
            return dX, dU
        for arr, out in ((X, dX), (U, dU)):
            for i in range(arr.shape[1]):
                h = fd_step(arr[:, i])
                plus, minus = arr.copy(), arr.copy()
                plus[:, i] += h
                minus[:, i] -= h
                if arr is X:
                    fp = self._term_values(term, t, plus, U)
                    fm = self._term_values(term, t, minus, U)
                else:
                    fp = self._term_values(term, t, X, plus)
                    fm = self._term_values(term, t, X, minus)
                out[:, i] = (fp - fm) / (2 * h)
        return dX, dU

    def partials(self, t, X, U):
        """``(f_x, f_u, g_x, g_u)`` with ``g_x[:, j, i] = dg_j/dx_i``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        U = np.atleast_2d(np.asarray(U, dtype=float))
        N, n, m = X.shape[0], self.p.n, self.p.m
        if self.p.hamiltonian_partials is not None:
            tt = np.broadcast_to(np.asarray(t, dtype=float), (N,))

            def hp(lam):
                hx, hu = self.p.hamiltonian_partials(tt, X, U, lam)
                return (
                    np.broadcast_to(np.asarray(hx, dtype=float), (N, n)),
                    np.broadcast_to(np.asarray(hu, dtype=float), (N, m)),
                )

            f_x, f_u = hp(np.zeros((N, n)))
            g_x, g_u = np.empty((N, n, n)), np.empty((N, n, m))
            for j in range(n):
                e = np.zeros((N, n))
                e[:, j] = 1.0
                hx, hu = hp(e)
                g_x[:, j, :] = hx - f_x
                g_u[:, j, :] = hu - f_u
            return f_x.copy(), f_u.copy(), g_x, g_u
        f_x, f_u = self._term_grads(self.p.running, t, X, U)
        g_x, g_u = np.empty((N, n, n)), np.empty((N, n, m))
        for j, g in enumerate(self.p.dynamics):
            g_x[:, j, :], g_u[:, j, :] = self._term_grads(g, t, X, U)
        return f_x, f_u, g_x, g_u

    def hamiltonian(self, t, X, U, Lam) -> np.ndarray:
        return self.running(t, X, U) + np.einsum("nj,nj->n", Lam, self.dynamics(t, X, U))

    def dH_du(self, t, X, U, Lam) -> np.ndarray:
        _, f_u, _, g_u = self.partials(t, X, U)
        return f_u + np.einsum("nj,njk->nk", Lam, g_u)

    def dH_dx(self, t, X, U, Lam) -> np.ndarray:
        f_x, _, g_x, _ = self.partials(t, X, U)
        return f_x + np.einsum("nj,nji->ni", Lam, g_x)


@dataclass(frozen=True)
class HamiltonianEval:
    value: float
    dH_du: np.ndarray
    dH_dx: np.ndarray


def _point(p: OcpProblem, x, u, lam):
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if x.size != p.n or lam.size != p.n or u.size != p.m:
        raise ValueError(
            f"dimension mismatch: x has {x.size}, lam has {lam.size} (expected {p.n}); "
            f"u has {u.size} (expected {p.m})"
        )
    return x[None, :], u[None, :], lam[None, :]


def hamiltonian(p: OcpProblem, t: float, x, u, lam) -> HamiltonianEval:
    """H = f + lam . g and its partials at a single point."""
    X, U, L = _point(p, x, u, lam)
    ev = p.evaluator
    f_x, f_u, g_x, g_u = ev.partials(t, X, U)
    value = float(ev.hamiltonian(t, X, U, L)[0])
    return HamiltonianEval(
        value=value,
        dH_du=(f_u + np.einsum("nj,njk->nk", L, g_u))[0],
        dH_dx=(f_x + np.einsum("nj,nji->ni", L, g_x))[0],
    )


def adjoint_rhs(p: OcpProblem, t: float, x, u, lam) -> np.ndarray:
    """Costate velocity ``-H_x``."""
    return -hamiltonian(p, t, x, u, lam).dH_dx


def transversality(p: OcpProblem, x_final) -> list[float | None]:
    """Terminal adjoint values; ``None`` marks fixed components (unknown)."""
    x_final = np.asarray(x_final, dtype=float)
    if x_final.shape != (p.n,):
        raise ValueError(f"x_final must have shape ({p.n},)")
    grad = p.evaluator.terminal_grad(x_final)
    return [None if v is not None else float(grad[i]) for i, v in enumerate(p.boundary.terminal)]


def number_node(v: float) -> ExprNode:
    """Constant node; negatives become unary minus so printing round-trips."""
    v = float(v)
    return E.neg(E.const(-v)) if v < 0 or (v == 0 and math.copysign(1, v) < 0) else E.const(v)


def bind_parameters(node: ExprNode, params: dict[str, float]) -> ExprNode:
    return E.substitute(node, {k: number_node(v) for k, v in params.items()})


def registry_get(name: str, **overrides: float) -> OcpProblem:
    """Built-in example problem by name; see :mod:`pmp_sweep.registry`."""
    from pmp_sweep.registry import registry_get as get

    return get(name, **overrides)
