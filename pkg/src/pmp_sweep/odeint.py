"""Fixed-step RK4 on a uniform grid, trajectory storage and quadrature.

State, adjoint and control share one grid.  Wherever an integrator needs a
tabulated quantity (control, frozen state) at an RK half step it uses the
average of the two neighbouring nodes, i.e. linear interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np


class IntegrationError(ArithmeticError):
    def __init__(self, message: str, node: int, t: float):
        self.node = node
        self.t = t
        super().__init__(f"{message} at node {node} (t={t:.17g})")


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    t1: float
    N: int = 1001

    def __post_init__(self):
        if self.N < 2:
            raise ValueError(f"grid needs at least 2 nodes, got {self.N}")
        if not self.t0 < self.t1:
            raise ValueError("grid needs t0 < t1")

    @property
    def h(self) -> float:
        return (self.t1 - self.t0) / (self.N - 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        out = self.t0 + self.h * np.arange(self.N)
        out[-1] = self.t1
        return out

    @cached_property
    def half_nodes(self) -> np.ndarray:
        """Nodes and RK midpoints interleaved, length ``2N - 1``."""
        out = self.t0 + 0.5 * self.h * np.arange(2 * self.N - 1)
        out[-1] = self.t1
        return out

    def half_index(self, t: float) -> int:
        return int(round(2.0 * (t - self.t0) / self.h))

    def interpolate(self, values: np.ndarray, t) -> np.ndarray:
        """Linear interpolation of nodal ``values`` (shape (N,) or (N, k))."""
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            return np.interp(t, self.nodes, values)
        return np.stack([np.interp(t, self.nodes, values[:, j]) for j in range(values.shape[1])], axis=-1)


def with_midpoints(values: np.ndarray) -> np.ndarray:
    """Interleave nodal rows with their midpoint averages: (N, k) -> (2N-1, k)."""
    values = np.asarray(values, dtype=float)
    out = np.empty((2 * values.shape[0] - 1,) + values.shape[1:])
    out[0::2] = values
    out[1::2] = 0.5 * (values[:-1] + values[1:])
    return out


@dataclass(frozen=True)
class Trajectory:
    grid: TimeGrid
    x: np.ndarray
    u: np.ndarray
    lam: np.ndarray | None = None

    def __post_init__(self):
        N = self.grid.N
        for label, arr in (("x", self.x), ("u", self.u), ("lam", self.lam)):
            if arr is not None and (arr.ndim != 2 or arr.shape[0] != N):
                raise ValueError(f"{label} must have shape (N={N}, k), got {arr.shape}")
        if self.lam is not None and self.lam.shape != self.x.shape:
            raise ValueError("lam must have the same shape as x")

    @property
    def t(self) -> np.ndarray:
        return self.grid.nodes


def _finite_or_raise(Y: np.ndarray, grid: TimeGrid, direction: str) -> np.ndarray:
    bad = ~np.isfinite(Y).all(axis=1)
    if bad.any():
        rows = np.flatnonzero(bad)
        i = int(rows[0] if direction == "forward" else rows[-1])
        raise IntegrationError(f"non-finite value in {direction} integration", i, grid.nodes[i])
    return Y


def _rows(values) -> list:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr.tolist()


# The stepping loops work on Python float lists: the systems here have a
# handful of components and per-call NumPy overhead would dominate.


def rk4_forward(
    rhs: Callable, y0, grid: TimeGrid, controls: np.ndarray | None = None
) -> np.ndarray:
    """Integrate ``y' = rhs(t, y[, u])`` from ``grid.t0`` to ``grid.t1``.

    ``rhs`` receives ``y`` as a list and may return any sequence.  If
    ``controls`` (nodal values, shape (N, m)) is given, ``rhs`` is called
    as ``rhs(t, y, u)`` with ``u`` linearly interpolated at the half steps.
    Returns an ``(N, dim)`` array of nodal values.
    """
    y = [float(v) for v in np.asarray(y0, dtype=float).reshape(-1)]
    t = grid.nodes.tolist()
    h = grid.h
    hh, h6 = 0.5 * h, h / 6.0
    out = [y]
    if controls is not None:
        C = _rows(controls)
        Cm = _rows(0.5 * (np.asarray(controls, dtype=float)[:-1] + np.asarray(controls, dtype=float)[1:]))
    i = 0
    try:
        for i in range(grid.N - 1):
            ti = t[i]
            if controls is None:
                k1 = rhs(ti, y)
                k2 = rhs(ti + hh, [a + hh * b for a, b in zip(y, k1)])
                k3 = rhs(ti + hh, [a + hh * b for a, b in zip(y, k2)])
                k4 = rhs(ti + h, [a + h * b for a, b in zip(y, k3)])
            else:
                cm = Cm[i]
                k1 = rhs(ti, y, C[i])
                k2 = rhs(ti + hh, [a + hh * b for a, b in zip(y, k1)], cm)
                k3 = rhs(ti + hh, [a + hh * b for a, b in zip(y, k2)], cm)
                k4 = rhs(ti + h, [a + h * b for a, b in zip(y, k3)], C[i + 1])
            y = [a + h6 * (b + 2.0 * (c + d) + e) for a, b, c, d, e in zip(y, k1, k2, k3, k4)]
            out.append(y)
    except OverflowError:
        raise IntegrationError("overflow in forward integration", i + 1, t[i + 1]) from None
    return _finite_or_raise(np.array(out), grid, "forward")


def rk4_backward(
    rhs: Callable, y_final, grid: TimeGrid, frozen: np.ndarray | None = None
) -> np.ndarray:
    """Integrate ``y' = rhs(t, y[, z])`` from ``grid.t1`` down to ``grid.t0``.

    ``frozen`` holds nodal values (shape (N, k)) of quantities the
    right-hand side depends on (typically state and control); they are
    linearly interpolated at the half steps and passed as ``z``.
    """
    y = [float(v) for v in np.asarray(y_final, dtype=float).reshape(-1)]
    t = grid.nodes.tolist()
    h = -grid.h
    hh, h6 = 0.5 * h, h / 6.0
    N = grid.N
    out = [y]
    if frozen is not None:
        Z = _rows(frozen)
        Zm = _rows(0.5 * (np.asarray(frozen, dtype=float)[:-1] + np.asarray(frozen, dtype=float)[1:]))
    i = N - 1
    try:
        for i in range(N - 1, 0, -1):
            ti = t[i]
            if frozen is None:
                k1 = rhs(ti, y)
                k2 = rhs(ti + hh, [a + hh * b for a, b in zip(y, k1)])
                k3 = rhs(ti + hh, [a + hh * b for a, b in zip(y, k2)])
                k4 = rhs(ti + h, [a + h * b for a, b in zip(y, k3)])
            else:
                zm = Zm[i - 1]
                k1 = rhs(ti, y, Z[i])
                k2 = rhs(ti + hh, [a + hh * b for a, b in zip(y, k1)], zm)
                k3 = rhs(ti + hh, [a + hh * b for a, b in zip(y, k2)], zm)
                k4 = rhs(ti + h, [a + h * b for a, b in zip(y, k3)], Z[i - 1])
            y = [a + h6 * (b + 2.0 * (c + d) + e) for a, b, c, d, e in zip(y, k1, k2, k3, k4)]
            out.append(y)
    except OverflowError:
        raise IntegrationError("overflow in backward integration", i - 1, t[i - 1]) from None
    return _finite_or_raise(np.array(out[::-1]), grid, "backward")


def quadrature(values, grid: TimeGrid) -> float:
    """Composite Simpson for odd ``N`` (even number of panels), else trapezoid."""
    f = np.asarray(values, dtype=float)
    if grid.N < 2:
        raise ValueError("quadrature needs at least 2 nodes")
    if f.shape != (grid.N,):
        raise ValueError(f"expected {grid.N} values, got shape {f.shape}")
    h = grid.h
    if grid.N % 2 == 1 and grid.N >= 3:
        return float(h / 3.0 * (f[0] + f[-1] + 4.0 * f[1:-1:2].sum() + 2.0 * f[2:-1:2].sum()))
    return float(h * (0.5 * (f[0] + f[-1]) + f[1:-1].sum()))
