"""Built-in example problems with named, overridable parameters.

=========================  ===========================================  =====
name                       problem                                      sense
=========================  ===========================================  =====
linear_growth              int (alpha x - r u^2 / 2), x' = a x + b u   max
linear_growth_saturated    same with T = 6 (long saturated stretch)     max
double_integrator          int (x2 + u^2), x1'' = u, x1(1) = 1 fixed    min
lqr_scalar                 1/2 int (Q x^2 + R u^2) + M x(T)^2 / 2        min
isoperimetric              1/2 int u^2, x' = u, int x = 2, x(1) = 1     min
second_order               1/2 int (u^2 - x^2), x'' = u                 min
harvest                    int (p x - c) u, x' = g (1 - u) x, u in box  max
tracking_saturated         -1/2 int (x^2 + u^2), x' = u, narrow box     max
=========================  ===========================================  =====
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

from pmp_sweep import expr as E
from pmp_sweep.model import BoundarySpec, BoxBounds, OcpProblem, bind_parameters
from pmp_sweep.transforms import (
    HigherOrderSpec,
    IsoperimetricSpec,
    add_isoperimetric,
    reduce_higher_order,
)


class UnknownProblemError(KeyError):
    pass


@dataclass(frozen=True)
class BuiltinEntry:
    builder: Callable[[dict], OcpProblem]
    defaults: dict
    summary: str


def _bind(src: str, params: dict) -> E.ExprNode:
    return bind_parameters(E.parse(src), params)


def _linear_growth(P):
    return OcpProblem(
        states=("x",),
        controls=("u",),
        dynamics=(_bind("a*x + b*u", P),),
        running=_bind("alpha*x - 0.5*r*u^2", P),
        boundary=BoundarySpec((P["x0"],)),
        t1=P["T"],
        sense="max",
        bounds=BoxBounds((P["lower"],), (P["upper"],)),
        name="linear_growth",
    )


def _double_integrator(P):
    return OcpProblem(
        states=("x1", "x2"),
        controls=("u",),
        dynamics=(E.parse("x2"), E.parse("u")),
        running=E.parse("x2 + u^2"),
        boundary=BoundarySpec((0.0, 0.0), (P["x1_final"], None)),
        t1=P["T"],
        sense="min",
        name="double_integrator",
    )


def _lqr_scalar(P):
    return OcpProblem(
        states=("x",),
        controls=("u",),
        dynamics=(_bind("A*x + B*u", P),),
        running=_bind("0.5*(Q*x^2 + R*u^2)", P),
        terminal=_bind("0.5*M*x^2", P),
        boundary=BoundarySpec((P["x0"],)),
        t1=P["T"],
        sense="min",
        name="lqr_scalar",
    )


def _isoperimetric(P):
    base = OcpProblem(
        states=("x",),
        controls=("u",),
        dynamics=(E.parse("u"),),
        running=E.parse("0.5*u^2"),
        boundary=BoundarySpec((0.0,), (P["x_final"],)),
        t1=1.0,
        sense="min",
        name="isoperimetric",
    )
    return add_isoperimetric(IsoperimetricSpec(base, "x", P["budget"]))


def _second_order(P):
    return reduce_higher_order(
        HigherOrderSpec(
            rhs="u",
            initial=(P["x0"], P["v0"]),
            running="0.5*(u^2 - x^2)",
            t1=P["T"],
            sense="min",
            name="second_order",
        )
    )


def _harvest(P):
    return OcpProblem(
        states=("x",),
        controls=("u",),
        dynamics=(_bind("g*(1 - u)*x", P),),
        running=_bind("p*u*x - c*u", P),
        boundary=BoundarySpec((P["x0"],)),
        t1=P["T"],
        sense="max",
        bounds=BoxBounds((0.0,), (P["umax"],)),
        name="harvest",
    )


def _tracking_saturated(P):
    return OcpProblem(
        states=("x",),
        controls=("u",),
        dynamics=(E.parse("u"),),
        running=E.parse("-0.5*(x^2 + u^2)"),
        boundary=BoundarySpec((P["x0"],)),
        t1=P["T"],
        sense="max",
        bounds=BoxBounds((P["lower"],), (P["upper"],)),
        name="tracking_saturated",
    )


_LINEAR_GROWTH = dict(alpha=1.0, r=1.0, a=0.0, b=1.0, T=3.0, x0=1.0, lower=0.0, upper=2.0)

BUILTINS: dict[str, BuiltinEntry] = {
    "linear_growth": BuiltinEntry(
        _linear_growth, _LINEAR_GROWTH, "growth payoff, quadratic effort cost, box [0, 2]"
    ),
    "linear_growth_saturated": BuiltinEntry(
        _linear_growth, {**_LINEAR_GROWTH, "T": 6.0}, "linear_growth with T = 6"
    ),
    "double_integrator": BuiltinEntry(
        _double_integrator, dict(T=1.0, x1_final=1.0), "min int (x2 + u^2), x1(1) = 1 fixed"
    ),
    "lqr_scalar": BuiltinEntry(
        _lqr_scalar,
        dict(A=0.0, B=1.0, Q=1.0, R=1.0, M=0.0, T=1.0, x0=1.0),
        "scalar LQR, closed form through tanh",
    ),
    "isoperimetric": BuiltinEntry(
        _isoperimetric, dict(x_final=1.0, budget=2.0), "min 1/2 int u^2 with int x = 2"
    ),
    "second_order": BuiltinEntry(
        _second_order, dict(T=math.pi, x0=1.0, v0=1.0), "x'' = u lifted to two states"
    ),
    "harvest": BuiltinEntry(
        _harvest,
        dict(g=1.0, p=1.0, c=0.0, x0=1.0, umax=1.0, T=2.0),
        "grow then harvest; bang-bang, switch at T - 1/g when c = 0",
    ),
    "tracking_saturated": BuiltinEntry(
        _tracking_saturated,
        dict(x0=1.0, T=2.0, lower=-0.3, upper=0.0),
        "state-dependent adjoint, clipping is suboptimal",
    ),
}


def registry_names() -> list[str]:
    return sorted(BUILTINS)


def registry_get(name: str, **overrides: float) -> OcpProblem:
    """Build a built-in problem, optionally overriding its parameters."""
    try:
        entry = BUILTINS[name]
    except KeyError:
        raise UnknownProblemError(
            f"unknown problem {name!r}; available: {', '.join(registry_names())}"
        ) from None
    unknown = set(overrides) - set(entry.defaults)
    if unknown:
        raise UnknownProblemError(
            f"{name} has no parameter(s) {sorted(unknown)}; parameters: {sorted(entry.defaults)}"
        )
    params = {**entry.defaults, **{k: float(v) for k, v in overrides.items()}}
    return replace(entry.builder(params), name=name)
