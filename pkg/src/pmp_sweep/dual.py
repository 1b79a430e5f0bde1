"""Forward-mode dual numbers.

The value and derivative parts may be Python floats or NumPy arrays of a
common shape, so one expression walk can differentiate at many nodes at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np


@dataclass(frozen=True)
class Dual:
    """Dual number ``value + derivative*eps`` with ``eps**2 == 0``."""

    value: Any
    derivative: Any = 0.0

    def __add__(self, other):
        other = lift(other)
        return Dual(self.value + other.value, self.derivative + other.derivative)

    __radd__ = __add__

    def __sub__(self, other):
        other = lift(other)
        return Dual(self.value - other.value, self.derivative - other.derivative)

    def __rsub__(self, other):
        return lift(other) - self

    def __neg__(self):
        return Dual(-self.value, -self.derivative)

    def __mul__(self, other):
        other = lift(other)
        return Dual(
            self.value * other.value,
            self.derivative * other.value + self.value * other.derivative,
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = lift(other)
        q = self.value / other.value
        return Dual(q, (self.derivative - q * other.derivative) / other.value)

    def __rtruediv__(self, other):
        return lift(other) / self

    def __pow__(self, other):
        return power(self, other)

    def __rpow__(self, other):
        return power(lift(other), self)


def lift(v) -> Dual:
    return v if isinstance(v, Dual) else Dual(v, 0.0)


def _is_zero(d) -> bool:
    return bool(np.all(np.asarray(d) == 0.0))


def power(base, exponent) -> Dual:
    base, exponent = lift(base), lift(exponent)
    value = np.power(base.value, exponent.value)
    if _is_zero(base.derivative):
        d_base = 0.0
    else:
        # b * a**(b-1) written without the division by a so a = 0 stays finite
        d_base = exponent.value * np.power(base.value, exponent.value - 1.0) * base.derivative
    if _is_zero(exponent.derivative):
        d_exp = 0.0
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            d_exp = value * np.log(base.value) * exponent.derivative
    return Dual(value, d_base + d_exp)


def exp(x: Dual) -> Dual:
    v = np.exp(x.value)
    return Dual(v, v * x.derivative)


def ln(x: Dual) -> Dual:
    return Dual(np.log(x.value), x.derivative / x.value)


def sin(x: Dual) -> Dual:
    return Dual(np.sin(x.value), np.cos(x.value) * x.derivative)


def cos(x: Dual) -> Dual:
    return Dual(np.cos(x.value), -np.sin(x.value) * x.derivative)


def sqrt(x: Dual) -> Dual:
    v = np.sqrt(x.value)
    return Dual(v, 0.5 * x.derivative / v)


def tanh(x: Dual) -> Dual:
    v = np.tanh(x.value)
    return Dual(v, (1.0 - v * v) * x.derivative)


def absolute(x: Dual) -> Dual:
    # right derivative at the kink: d|x| = +x' when x == 0
    sign = np.where(np.asarray(x.value) >= 0.0, 1.0, -1.0)
    if np.ndim(sign) == 0:
        sign = float(sign)
    return Dual(np.abs(x.value), sign * x.derivative)


def _select(first_wins, a: Dual, b: Dual) -> Dual:
    if np.ndim(first_wins) == 0 and np.ndim(a.value) == 0 and np.ndim(b.value) == 0:
        return a if bool(first_wins) else b
    return Dual(
        np.where(first_wins, a.value, b.value),
        np.where(first_wins, a.derivative, b.derivative),
    )


def minimum(a: Dual, b: Dual) -> Dual:
    # ties take the first argument's derivative
    return _select(np.asarray(a.value) <= np.asarray(b.value), a, b)


def maximum(a: Dual, b: Dual) -> Dual:
    return _select(np.asarray(a.value) >= np.asarray(b.value), a, b)
