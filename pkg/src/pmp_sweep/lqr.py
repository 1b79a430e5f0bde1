"""Finite-horizon continuous-time LQR through the Riccati matrix ODE.

    minimize  1/2 x(T)' M x(T) + 1/2 int_0^T (x'Qx + u'Ru) dt,   x' = Ax + Bu.

``riccati_solve`` integrates ``-S' = A'S + SA - S B R^{-1} B'S + Q`` backward
from ``S(T) = M``; ``closed_loop`` then runs ``x' = (A - BK)x`` forward with
``K = R^{-1} B' S``.  ``lqr_as_ocp`` exposes the same problem to the sweep
solver so both routes can be compared.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from pmp_sweep.model import BoundarySpec, BoxBounds, OcpProblem
from pmp_sweep.odeint import IntegrationError, TimeGrid, Trajectory, rk4_forward

MatrixLike = Union[np.ndarray, Callable[[float], np.ndarray]]


class LqrError(ValueError):
    pass


def _const(M) -> np.ndarray | None:
    return None if callable(M) else np.atleast_2d(np.asarray(M, dtype=float))


@dataclass(frozen=True)
class LqrProblem:
    """Matrices may be constant arrays or callables ``t -> array``."""

    A: MatrixLike
    B: MatrixLike
    Q: MatrixLike
    R: MatrixLike
    M: np.ndarray
    T: float
    x0: np.ndarray

    def __post_init__(self):
        for name in ("A", "B", "Q", "R"):
            v = getattr(self, name)
            if not callable(v):
                object.__setattr__(self, name, _const(v))
        object.__setattr__(self, "M", _const(self.M))
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).reshape(-1))
        object.__setattr__(self, "T", float(self.T))
        if self.T <= 0:
            raise LqrError("horizon T must be positive")
        n, m = self.n, self.m
        for t in np.linspace(0.0, self.T, 5) if self.time_varying else (0.0,):
            A, B, Q, R = self.A_at(t), self.B_at(t), self.Q_at(t), self.R_at(t)
            if A.shape != (n, n) or B.shape != (n, m) or Q.shape != (n, n) or R.shape != (m, m):
                raise LqrError(
                    f"inconsistent shapes A{A.shape} B{B.shape} Q{Q.shape} R{R.shape} for n={n}, m={m}"
                )
            _check_sym(Q, "Q", psd=True)
            _check_sym(R, "R", psd=False)
        if self.M.shape != (n, n):
            raise LqrError(f"M must be {n}x{n}")
        _check_sym(self.M, "M", psd=True)

    @property
    def time_varying(self) -> bool:
        return any(callable(getattr(self, k)) for k in ("A", "B", "Q", "R"))

    @property
    def n(self) -> int:
        return self.x0.size

    @property
    def m(self) -> int:
        B = self.B(0.0) if callable(self.B) else self.B
        return np.atleast_2d(B).shape[1]

    def _at(self, name, t):
        v = getattr(self, name)
        return np.atleast_2d(np.asarray(v(t), dtype=float)) if callable(v) else v

    def A_at(self, t):
        return self._at("A", t)

    def B_at(self, t):
        return self._at("B", t)

    def Q_at(self, t):
        return self._at("Q", t)

    def R_at(self, t):
        return self._at("R", t)


def _check_sym(S, name, psd):
    if not np.array_equal(S, S.T):
        raise LqrError(f"{name} must be symmetric")
    ev = np.linalg.eigvalsh(S)
    if psd and ev.min() < -1e-10:
        raise LqrError(f"{name} must be positive semidefinite (min eigenvalue {ev.min():.3g})")
    if not psd and ev.min() < 1e-12:
        raise LqrError(f"{name} must be positive definite (min eigenvalue {ev.min():.3g})")


@dataclass(frozen=True)
class RiccatiSolution:
    grid: TimeGrid
    S: np.ndarray  # (N, n, n)
    K: np.ndarray  # (N, m, n)
    # largest |S - S^T| seen before each symmetrization
    max_asymmetry: float = 0.0


def _gain(p: LqrProblem, t, S):
    try:
        return np.linalg.solve(p.R_at(t), p.B_at(t).T @ S)
    except np.linalg.LinAlgError:
        raise LqrError(f"R is singular at t={t}") from None


def _riccati_rhs(p: LqrProblem, t, S):
    A, B, Q = p.A_at(t), p.B_at(t), p.Q_at(t)
    return -(A.T @ S + S @ A - S @ B @ _gain(p, t, S) + Q)


def _rk4_step(p, t, h, S):
    k1 = _riccati_rhs(p, t, S)
    k2 = _riccati_rhs(p, t + 0.5 * h, S + 0.5 * h * k1)
    k3 = _riccati_rhs(p, t + 0.5 * h, S + 0.5 * h * k2)
    k4 = _riccati_rhs(p, t + h, S + h * k3)
    return S + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


def riccati_solve(p: LqrProblem, N: int = 1001) -> RiccatiSolution:
    """Backward RK4 on the matrix Riccati ODE, symmetrizing after every step."""
    grid = TimeGrid(0.0, p.T, N)
    t, h = grid.nodes, -grid.h
    n = p.n
    S_all = np.empty((N, n, n))
    S_all[-1] = p.M
    S = p.M.copy()
    asym = 0.0
    for i in range(N - 1, 0, -1):
        ti = t[i]
        with np.errstate(over="ignore", invalid="ignore"):
            S = _rk4_step(p, ti, h, S)
        if not np.all(np.isfinite(S)):
            raise IntegrationError("Riccati solution escaped to infinity", i - 1, t[i - 1])
        asym = max(asym, float(np.max(np.abs(S - S.T))))
        S = 0.5 * (S + S.T)
        S_all[i - 1] = S
    K = np.stack([_gain(p, t[i], S_all[i]) for i in range(N)])
    return RiccatiSolution(grid=grid, S=S_all, K=K, max_asymmetry=asym)


def closed_loop(p: LqrProblem, sol: RiccatiSolution) -> Trajectory:
    """Integrate x' = (A - BK) x with K linearly interpolated between nodes."""
    grid = sol.grid
    if abs(grid.t1 - p.T) > 1e-12:
        raise LqrError("Riccati solution and problem horizons differ")
    n, m = p.n, p.m
    Kflat = sol.K.reshape(grid.N, m * n)

    def rhs(t, x, kflat):
        K = np.asarray(kflat).reshape(m, n)
        x = np.asarray(x)
        return (p.A_at(t) @ x - p.B_at(t) @ (K @ x)).tolist()

    X = rk4_forward(rhs, p.x0, grid, Kflat)
    U = -np.einsum("nij,nj->ni", sol.K, X)
    Lam = np.einsum("nij,nj->ni", sol.S, X)
    return Trajectory(grid, X, U, Lam)


def _quad_form(M: np.ndarray, names) -> str:
    terms = []
    for i, a in enumerate(names):
        for j, b in enumerate(names):
            if M[i, j] != 0.0:
                terms.append(f"{float(M[i, j])!r}*{a}*{b}")
    return " + ".join(terms) if terms else "0"


def _linear_form(row: np.ndarray, names) -> str:
    terms = [f"{float(c)!r}*{v}" for c, v in zip(row, names) if c != 0.0]
    return " + ".join(terms) if terms else "0"


def lqr_as_ocp(p: LqrProblem) -> OcpProblem:
    """The same problem as a generic min-sense problem with an unbounded box."""
    n, m = p.n, p.m
    xs = tuple(f"x{i + 1}" for i in range(n)) if n > 1 else ("x",)
    us = tuple(f"u{k + 1}" for k in range(m)) if m > 1 else ("u",)
    common = dict(
        states=xs,
        controls=us,
        boundary=BoundarySpec(tuple(p.x0)),
        t0=0.0,
        t1=p.T,
        sense="min",
        bounds=BoxBounds.unbounded(m),
        name="lqr",
    )
    terminal = f"0.5*({_quad_form(p.M, xs)})" if np.any(p.M) else None
    if not p.time_varying:
        A, B, Q, R = p.A, p.B, p.Q, p.R
        dyn = tuple(
            f"{_linear_form(A[i], xs)} + {_linear_form(B[i], us)}" for i in range(n)
        )
        running = f"0.5*({_quad_form(Q, xs)} + {_quad_form(R, us)})"
        return OcpProblem(dynamics=dyn, running=running, terminal=terminal, **common)

    def running_cb(t, x, u):
        t = np.atleast_1d(t)
        Q = np.stack([p.Q_at(s) for s in t])
        R = np.stack([p.R_at(s) for s in t])
        x2, u2 = np.atleast_2d(x), np.atleast_2d(u)
        return 0.5 * (np.einsum("ni,nij,nj->n", x2, Q, x2) + np.einsum("ni,nij,nj->n", u2, R, u2))

    def dyn_cb(i):
        def g(t, x, u):
            t = np.atleast_1d(t)
            x2, u2 = np.atleast_2d(x), np.atleast_2d(u)
            A = np.stack([p.A_at(s)[i] for s in t])
            B = np.stack([p.B_at(s)[i] for s in t])
            return np.einsum("ni,ni->n", A, x2) + np.einsum("nk,nk->n", B, u2)

        return g

    return OcpProblem(
        dynamics=tuple(dyn_cb(i) for i in range(n)), running=running_cb, terminal=terminal, **common
    )


def ocp_to_lqr(p: OcpProblem, probes: int = 8, seed: int = 0) -> LqrProblem:
    """Recover (A, B, Q, R, M) from a problem that is LQR-shaped.

    Coefficients are read off first partials at the origin and at unit
    vectors; the quadratic/linear structure is then confirmed at random
    points.  Raises :class:`LqrError` when the problem is not an LQR.
    """
    if p.sense != "min":
        raise LqrError("LQR problems are minimizations")
    if np.any(np.isfinite(p.bounds.lo)) or np.any(np.isfinite(p.bounds.hi)):
        raise LqrError("LQR needs an unbounded control box")
    if p.boundary.fixed_indices:
        raise LqrError("LQR needs free terminal states")
    if p.t0 != 0.0:
        raise LqrError("LQR problems start at t0 = 0")
    n, m = p.n, p.m
    ev = p.evaluator

    def coeffs(t):
        X = np.zeros((1 + n, n))
        X[1:] = np.eye(n)
        U = np.zeros((1 + m, m))
        U[1:] = np.eye(m)
        f_x, _, g_x, g_u = ev.partials(t, X, np.zeros((1 + n, m)))
        _, f_u, _, _ = ev.partials(t, np.zeros((1 + m, n)), U)
        Q = (f_x[1:] - f_x[0]).T
        R = (f_u[1:] - f_u[0]).T
        return g_x[0], g_u[0], Q, R

    rng = np.random.default_rng(seed)
    ts = np.concatenate([[0.0, p.t1], rng.uniform(0.0, p.t1, probes)])
    table = [coeffs(t) for t in ts]
    A0, B0, Q0, R0 = table[0]
    constant = all(
        all(np.allclose(a, b, rtol=1e-12, atol=1e-12) for a, b in zip(row, table[0])) for row in table
    )
    # structural check: g = Ax + Bu and f = x'Qx/2 + u'Ru/2 exactly
    for t in ts:
        A, B, Q, R = coeffs(t)
        X = rng.normal(size=(probes, n))
        U = rng.normal(size=(probes, m))
        g = ev.dynamics(t, X, U)
        f = ev.running(t, X, U)
        g_ref = X @ A.T + U @ B.T
        f_ref = 0.5 * (np.einsum("ni,ij,nj->n", X, Q, X) + np.einsum("ni,ij,nj->n", U, R, U))
        scale = 1.0 + np.abs(g_ref).max() + np.abs(f_ref).max()
        if np.abs(g - g_ref).max() > 1e-8 * scale or np.abs(f - f_ref).max() > 1e-8 * scale:
            raise LqrError(
                "problem is not LQR-shaped (dynamics must be linear, running cost "
                "a pure quadratic form in x and u)"
            )
    x_probe = rng.normal(size=n)
    grad0 = ev.terminal_grad(np.zeros(n))
    M = np.stack([ev.terminal_grad(e) - grad0 for e in np.eye(n)], axis=1)
    M = 0.5 * (M + M.T)
    phi_ref = 0.5 * x_probe @ M @ x_probe
    if np.any(np.abs(grad0) > 1e-10) or abs(ev.terminal(x_probe) - phi_ref) > 1e-8 * (1 + abs(phi_ref)):
        raise LqrError("terminal payoff must be a pure quadratic form 1/2 x'Mx")
    sym = lambda S: 0.5 * (S + S.T)  # noqa: E731
    if constant:
        A, B, Q, R = A0, B0, sym(Q0), sym(R0)
    else:
        A = lambda t: coeffs(t)[0]  # noqa: E731
        B = lambda t: coeffs(t)[1]  # noqa: E731
        Q = lambda t: sym(coeffs(t)[2])  # noqa: E731
        R = lambda t: sym(coeffs(t)[3])  # noqa: E731
    return LqrProblem(A=A, B=B, Q=Q, R=R, M=M, T=p.t1, x0=np.array(p.boundary.initial))


def scalar_example(T: float = 1.0, x0: float = 1.0) -> LqrProblem:
    """A = 0, B = 1, Q = 1, R = 1, M = 0."""
    return LqrProblem(A=0.0, B=1.0, Q=1.0, R=1.0, M=0.0, T=T, x0=[x0])
