"""Problem rewrites: higher-order dynamics to first-order chains, and
integral (isoperimetric) constraints to endpoint-constrained auxiliary states.

Derivatives of the scalar variable ``x`` are written ``x``, ``x'``,
``x''``, ... in source text and become the states ``x1``, ``x2``, ... of
the emitted problem.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

from pmp_sweep import expr as E
from pmp_sweep.expr import ExprNode
from pmp_sweep.model import BoundarySpec, BoxBounds, OcpProblem

log = logging.getLogger(__name__)


def _node(v) -> ExprNode | None:
    if v is None or isinstance(v, ExprNode):
        return v
    return E.parse(str(v))


@dataclass(frozen=True)
class HigherOrderSpec:
    """``x^(order) = rhs`` with initial values ``x(t0), x'(t0), ...``."""

    rhs: ExprNode | str
    initial: tuple[float, ...]
    running: ExprNode | str
    controls: tuple[str, ...] = ("u",)
    variable: str = "x"
    terminal_payoff: ExprNode | str | None = None
    # fixed terminal values of x, x', ... (None = free); default all free
    terminal: tuple[float | None, ...] | None = None
    bounds: BoxBounds | None = None
    t0: float = 0.0
    t1: float = 1.0
    sense: str = "min"
    name: str = ""

    def __post_init__(self):
        s = object.__setattr__
        s(self, "rhs", _node(self.rhs))
        s(self, "running", _node(self.running))
        s(self, "terminal_payoff", _node(self.terminal_payoff))
        s(self, "initial", tuple(float(v) for v in self.initial))
        s(self, "controls", tuple(self.controls))
        if self.order < 1:
            raise ValueError("order must be at least 1")
        if self.terminal is not None and len(self.terminal) != self.order:
            raise ValueError(f"{len(self.terminal)} terminal conditions for order {self.order}")

    @property
    def order(self) -> int:
        return len(self.initial)

    def derivative_names(self) -> tuple[str, ...]:
        """Source spellings ``x, x', x'', ...`` of the state components."""
        return tuple(self.variable + "'" * i for i in range(self.order))

    def state_names(self) -> tuple[str, ...]:
        if self.order == 1:
            return (self.variable,)
        return tuple(f"{self.variable}{i + 1}" for i in range(self.order))


def reduce_higher_order(spec: HigherOrderSpec) -> OcpProblem:
    """Emit ``x1' = x2, ..., x_{n}' = x_{n+1}, x_{n+1}' = rhs`` with the payoff rewritten."""
    src = spec.derivative_names()
    dst = spec.state_names()
    mapping = {a: E.var(b) for a, b in zip(src, dst)}
    allowed = ("t",) + src + spec.controls

    def lift(node: ExprNode, label: str, names=allowed) -> ExprNode:
        E.check_bindable(node, names, label)
        return E.substitute(node, mapping)

    rhs = lift(spec.rhs, f"right-hand side of {src[-1]}'")
    chain = tuple(E.var(d) for d in dst[1:]) + (rhs,)
    return OcpProblem(
        states=dst,
        controls=spec.controls,
        dynamics=chain,
        running=lift(spec.running, "running payoff"),
        terminal=None
        if spec.terminal_payoff is None
        else lift(spec.terminal_payoff, "terminal payoff", ("t",) + src),
        boundary=BoundarySpec(spec.initial, spec.terminal),
        bounds=spec.bounds,
        t0=spec.t0,
        t1=spec.t1,
        sense=spec.sense,
        name=spec.name,
    )


@dataclass(frozen=True)
class IsoperimetricSpec:
    """Constraint ``int_{t0}^{t1} density dt = budget`` attached to ``base``."""

    base: OcpProblem
    density: ExprNode | str
    budget: float
    state_name: str = "z"

    def __post_init__(self):
        object.__setattr__(self, "density", _node(self.density))
        object.__setattr__(self, "budget", float(self.budget))
        E.check_bindable(
            self.density, ("t",) + self.base.states + self.base.controls, "isoperimetric density"
        )


@dataclass(frozen=True)
class Renaming:
    requested: str
    used: str


def _fresh_name(wanted: str, taken: Sequence[str]) -> str:
    if wanted not in taken:
        return wanted
    k = 2
    while f"{wanted}{k}" in taken:
        k += 1
    return f"{wanted}{k}"


def add_isoperimetric(spec: IsoperimetricSpec, renamed: list | None = None) -> OcpProblem:
    """Append ``z' = density``, ``z(t0) = 0``, ``z(t1) = budget`` (fixed).

    If ``z`` is taken the first free name among ``z2, z3, ...`` is used and a
    warning is logged; pass a list as ``renamed`` to also receive a
    :class:`Renaming` record.
    """
    p = spec.base
    taken = ("t",) + p.states + p.controls
    z = _fresh_name(spec.state_name, taken)
    if z != spec.state_name:
        log.warning("state name %r already in use; auxiliary state named %r", spec.state_name, z)
        if renamed is not None:
            renamed.append(Renaming(spec.state_name, z))
    if any(not isinstance(g, ExprNode) for g in p.dynamics) or not isinstance(p.running, ExprNode):
        raise TypeError("add_isoperimetric needs an expression-defined base problem")
    b = p.boundary
    return OcpProblem(
        states=p.states + (z,),
        controls=p.controls,
        dynamics=p.dynamics + (spec.density,),
        running=p.running,
        terminal=p.terminal,
        boundary=BoundarySpec(b.initial + (0.0,), b.terminal + (spec.budget,)),
        bounds=p.bounds,
        t0=p.t0,
        t1=p.t1,
        sense=p.sense,
        name=p.name,
        control_rules=p.control_rules,
    )
