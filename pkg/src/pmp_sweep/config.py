"""Sectioned plain-text problem files (``*.ocp``).

Example::

    [problem]
    name = linear_growth
    sense = max
    t0 = 0
    t1 = T
    states = x
    controls = u

    [parameters]
    alpha = 1
    T = 3

    [dynamics]
    x = a*x + b*u

    [objective]
    running = alpha*x - 0.5*r*u^2

    [bounds]
    u = 0, 2

    [boundary]
    x.initial = 1
    x.terminal = free

Numeric fields may be expressions over ``[parameters]``; parameter names in
dynamics and payoffs are replaced by their values.  ``#`` starts a comment.
Optional sections: ``[isoperimetric]`` (``density``, ``budget``, ``state``),
``[higher_order]`` (``variable``, ``rhs``, ``initial``, ``terminal``; replaces
``[dynamics]``/``[boundary]``, derivatives spelled ``x``, ``x'``, ...) and
``[solver]`` (see ``SOLVER_KEYS``).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

from pmp_sweep import expr as E
from pmp_sweep.fbsm import SweepConfig
from pmp_sweep.model import BoundarySpec, BoxBounds, OcpProblem, bind_parameters
from pmp_sweep.transforms import (
    HigherOrderSpec,
    IsoperimetricSpec,
    add_isoperimetric,
    reduce_higher_order,
)

SECTIONS = (
    "problem",
    "parameters",
    "dynamics",
    "objective",
    "bounds",
    "boundary",
    "isoperimetric",
    "higher_order",
    "solver",
)
PROBLEM_KEYS = ("name", "sense", "t0", "t1", "states", "controls")
OBJECTIVE_KEYS = ("running", "terminal")
ISOPERIMETRIC_KEYS = ("density", "budget", "state")
HIGHER_ORDER_KEYS = ("variable", "rhs", "initial", "terminal")
# config key -> SweepConfig field (or the solver choice / rule list)
SOLVER_KEYS = {
    "solver": "solver",
    "grid": "N",
    "damping": "damping",
    "tol": "tol",
    "max_iter": "max_iterations",
    "shooting_method": "shooting_method",
    "shooting_tol": "shooting_tol",
    "shooting_max_iter": "shooting_max_iterations",
    "rule": "rule",
}
SOLVERS = ("fbsm", "lqr")


class ConfigError(ValueError):
    def __init__(self, message, path=None, line=None, section=None, key=None):
        self.path, self.line, self.section, self.key = path, line, section, key
        where = []
        if path is not None:
            where.append(f"{path}:{line}" if line else str(path))
        if section is not None:
            where.append(f"[{section}]" + (f" {key}" if key else ""))
        super().__init__(": ".join(where + [message]))


@dataclass(frozen=True)
class Entry:
    value: str
    line: int


@dataclass
class RawConfig:
    path: str
    sections: dict[str, dict[str, Entry]] = field(default_factory=dict)
    section_lines: dict[str, int] = field(default_factory=dict)

    def error(self, message, section=None, key=None):
        line = None
        if section is not None:
            sec = self.sections.get(section, {})
            line = sec[key].line if key in sec else self.section_lines.get(section)
        return ConfigError(message, self.path, line, section, key)


_SECTION = re.compile(r"^\[\s*([A-Za-z_]+)\s*\]$")


def parse_text(text: str, path: str = "<string>") -> RawConfig:
    raw = RawConfig(path)
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION.match(line)
        if m:
            current = m.group(1).lower()
            if current not in SECTIONS:
                raise ConfigError(
                    f"unknown section [{current}]; expected one of {', '.join(SECTIONS)}", path, lineno
                )
            if current in raw.sections:
                raise ConfigError(f"section [{current}] appears twice", path, lineno)
            raw.sections[current] = {}
            raw.section_lines[current] = lineno
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", path, lineno, current)
        if current is None:
            raise ConfigError("key outside of any section", path, lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", path, lineno, current)
        if key in raw.sections[current]:
            raise ConfigError("duplicate key", path, lineno, current, key)
        raw.sections[current][key] = Entry(value, lineno)
    return raw


@dataclass(frozen=True)
class RunConfig:
    problem: OcpProblem
    sweep: SweepConfig = SweepConfig()
    solver: str = "fbsm"
    parameters: dict = field(default_factory=dict)
    source: str = ""
    rule: tuple[str, ...] | None = None


class _Builder:
    def __init__(self, raw: RawConfig, overrides: dict[str, float] | None):
        self.raw = raw
        self.params = self._parameters(overrides or {})

    def sec(self, name):
        return self.raw.sections.get(name, {})

    def err(self, message, section=None, key=None):
        return self.raw.error(message, section, key)

    def check_keys(self, section, allowed):
        for key in self.sec(section):
            if key not in allowed:
                raise self.err(f"unknown key; expected one of {', '.join(allowed)}", section, key)

    def require(self, section, key) -> str:
        if section not in self.raw.sections:
            raise self.err(f"missing [{section}] section")
        if key not in self.sec(section):
            raise self.err(f"missing key {key!r}", section)
        return self.sec(section)[key].value

    def _parameters(self, overrides):
        params: dict[str, float] = {}
        for key, entry in self.sec("parameters").items():
            if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", key):
                raise self.err("parameter names must be identifiers", "parameters", key)
            params[key] = self.number(entry.value, "parameters", key, params)
        for key, v in overrides.items():
            if key not in params:
                raise ConfigError(
                    f"--set {key}: no such parameter; defined: {', '.join(params) or 'none'}",
                    self.raw.path,
                )
            params[key] = float(v)
        return params

    def number(self, text, section, key, params=None) -> float:
        params = self.params if params is None else params
        low = text.strip().lower()
        if low in ("inf", "+inf"):
            return math.inf
        if low == "-inf":
            return -math.inf
        try:
            node = E.parse(text)
            return E.eval(node, params)
        except E.ExprSyntaxError as exc:
            raise self.err(f"bad number {text!r}: {exc}", section, key) from None
        except E.UnboundVariableError as exc:
            raise self.err(f"{exc} (not a parameter)", section, key) from None
        except E.ExprError as exc:
            raise self.err(str(exc), section, key) from None

    def expression(self, text, section, key, allowed) -> E.ExprNode:
        try:
            node = E.parse(text)
        except E.ExprSyntaxError as exc:
            raise self.err(f"bad expression {text!r}: {exc}", section, key) from None
        node = bind_parameters(node, {k: v for k, v in self.params.items() if k not in allowed})
        unknown = E.variables(node) - set(allowed)
        if unknown:
            raise self.err(
                f"unknown name(s) {', '.join(sorted(unknown))}; allowed: {', '.join(allowed)} "
                "and [parameters]",
                section,
                key,
            )
        return node

    def names(self, section, key) -> tuple[str, ...]:
        names = tuple(s.strip() for s in self.require(section, key).split(",") if s.strip())
        if not names:
            raise self.err("needs at least one name", section, key)
        for s in names:
            if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", s):
                raise self.err(f"invalid identifier {s!r}", section, key)
            if s in self.params:
                raise self.err(f"{s!r} is also a parameter", section, key)
        return names

    # -- sections -------------------------------------------------------
    def build(self) -> RunConfig:
        raw = self.raw
        if "problem" not in raw.sections:
            raise self.err("missing [problem] section")
        self.check_keys("problem", PROBLEM_KEYS)
        self.check_keys("objective", OBJECTIVE_KEYS)
        self.check_keys("isoperimetric", ISOPERIMETRIC_KEYS)
        self.check_keys("higher_order", HIGHER_ORDER_KEYS)
        self.check_keys("solver", tuple(SOLVER_KEYS))
        sense = self.sec("problem").get("sense", Entry("max", 0)).value.lower()
        if sense not in ("max", "min"):
            raise self.err("sense must be 'max' or 'min'", "problem", "sense")
        t0 = self.number(self.sec("problem").get("t0", Entry("0", 0)).value, "problem", "t0")
        t1 = self.number(self.require("problem", "t1"), "problem", "t1")
        if not t0 < t1:
            raise self.err(f"need t0 < t1, got {t0} and {t1}", "problem", "t1")
        controls = self.names("problem", "controls")
        name = self.sec("problem").get("name", Entry("", 0)).value
        bounds = self.bounds(controls)
        if "higher_order" in raw.sections:
            problem = self.higher_order(controls, bounds, t0, t1, sense, name)
        else:
            problem = self.first_order(controls, bounds, t0, t1, sense, name)
        if "isoperimetric" in raw.sections:
            problem = self.isoperimetric(problem)
        sweep, solver, rule = self.solver(controls)
        if rule is not None:
            problem = replace(problem, control_rules=rule)
        return RunConfig(
            problem=problem,
            sweep=sweep,
            solver=solver,
            parameters=dict(self.params),
            source=raw.path,
            rule=rule,
        )

    def bounds(self, controls) -> BoxBounds:
        self.check_keys("bounds", controls)
        lo, hi = [], []
        for c in controls:
            entry = self.sec("bounds").get(c)
            if entry is None:
                lo.append(-math.inf)
                hi.append(math.inf)
                continue
            parts = [s.strip() for s in entry.value.split(",")]
            if len(parts) != 2:
                raise self.err("expected 'lower, upper'", "bounds", c)
            a, b = (self.number(s, "bounds", c) for s in parts)
            if a > b:
                raise self.err(f"lower bound {a} exceeds upper bound {b}", "bounds", c)
            lo.append(a)
            hi.append(b)
        return BoxBounds(tuple(lo), tuple(hi))

    def objective(self, allowed, terminal_allowed):
        running = self.expression(
            self.require("objective", "running"), "objective", "running", allowed
        )
        term = self.sec("objective").get("terminal")
        terminal = (
            None
            if term is None
            else self.expression(term.value, "objective", "terminal", terminal_allowed)
        )
        return running, terminal

    def first_order(self, controls, bounds, t0, t1, sense, name) -> OcpProblem:
        states = self.names("problem", "states")
        allowed = ("t",) + states + controls
        if "dynamics" not in self.raw.sections:
            raise self.err("missing [dynamics] section")
        self.check_keys("dynamics", states)
        dyn = []
        for s in states:
            dyn.append(self.expression(self.require("dynamics", s), "dynamics", s, allowed))
        running, terminal = self.objective(allowed, ("t",) + states)
        boundary = self.boundary(states)
        try:
            return OcpProblem(
                states=states,
                controls=controls,
                dynamics=tuple(dyn),
                running=running,
                terminal=terminal,
                boundary=boundary,
                t0=t0,
                t1=t1,
                sense=sense,
                bounds=bounds,
                name=name,
            )
        except ValueError as exc:
            raise self.err(str(exc), "problem") from None

    def boundary(self, states) -> BoundarySpec:
        sec = "boundary"
        allowed = tuple(f"{s}.{k}" for s in states for k in ("initial", "terminal"))
        self.check_keys(sec, allowed)
        init, term = [], []
        for s in states:
            init.append(self.number(self.require(sec, f"{s}.initial"), sec, f"{s}.initial"))
            entry = self.sec(sec).get(f"{s}.terminal")
            if entry is None or entry.value.strip().lower() == "free":
                term.append(None)
            else:
                term.append(self.number(entry.value, sec, f"{s}.terminal"))
        return BoundarySpec(tuple(init), tuple(term))

    def higher_order(self, controls, bounds, t0, t1, sense, name) -> OcpProblem:
        sec = "higher_order"
        for other in ("dynamics", "boundary"):
            if other in self.raw.sections:
                raise self.err(f"[{other}] cannot be combined with [higher_order]", other)
        if "states" in self.sec("problem"):
            raise self.err("states are implied by [higher_order]", "problem", "states")
        var = self.sec(sec).get("variable", Entry("x", 0)).value
        initial = [
            self.number(s, sec, "initial") for s in self.require(sec, "initial").split(",")
        ]
        order = len(initial)
        derivs = tuple(var + "'" * i for i in range(order))
        allowed = ("t",) + derivs + controls
        rhs = self.expression(self.require(sec, "rhs"), sec, "rhs", allowed)
        running, terminal = self.objective(allowed, ("t",) + derivs)
        term_entry = self.sec(sec).get("terminal")
        terminal_values = None
        if term_entry is not None:
            parts = [s.strip() for s in term_entry.value.split(",")]
            if len(parts) != order:
                raise self.err(f"expected {order} terminal conditions", sec, "terminal")
            terminal_values = tuple(
                None if s.lower() == "free" else self.number(s, sec, "terminal") for s in parts
            )
        try:
            return reduce_higher_order(
                HigherOrderSpec(
                    rhs=rhs,
                    initial=tuple(initial),
                    running=running,
                    controls=controls,
                    variable=var,
                    terminal_payoff=terminal,
                    terminal=terminal_values,
                    bounds=bounds,
                    t0=t0,
                    t1=t1,
                    sense=sense,
                    name=name,
                )
            )
        except ValueError as exc:
            raise self.err(str(exc), sec) from None

    def isoperimetric(self, base: OcpProblem) -> OcpProblem:
        sec = "isoperimetric"
        allowed = ("t",) + base.states + base.controls
        density = self.expression(self.require(sec, "density"), sec, "density", allowed)
        budget = self.number(self.require(sec, "budget"), sec, "budget")
        state = self.sec(sec).get("state", Entry("z", 0)).value
        return add_isoperimetric(IsoperimetricSpec(base, density, budget, state))

    def solver(self, controls):
        sec = "solver"
        kwargs = {}
        solver = "fbsm"
        rule = None
        ints = ("N", "max_iterations", "shooting_max_iterations")
        for key, entry in self.sec(sec).items():
            target = SOLVER_KEYS[key]
            if target == "solver":
                solver = entry.value.strip().lower()
                if solver not in SOLVERS:
                    raise self.err(f"solver must be one of {', '.join(SOLVERS)}", sec, key)
            elif target == "rule":
                rule = tuple(s.strip() for s in entry.value.split(","))
                if len(rule) != len(controls):
                    raise self.err(f"one rule per control ({len(controls)})", sec, key)
            elif target == "shooting_method":
                kwargs[target] = entry.value.strip().lower()
            else:
                v = self.number(entry.value, sec, key)
                if target in ints:
                    if v != int(v):
                        raise self.err("expected an integer", sec, key)
                    v = int(v)
                kwargs[target] = v
        try:
            cfg = SweepConfig(**kwargs)
        except ValueError as exc:
            raise self.err(str(exc), sec) from None
        if rule is not None:
            from pmp_sweep.control_law import ControlUpdateRule

            try:
                ControlUpdateRule(rule)
            except ValueError as exc:
                raise self.err(str(exc), sec, "rule") from None
        return cfg, solver, rule


def load_text(text: str, path: str = "<string>", overrides: dict | None = None) -> RunConfig:
    return _Builder(parse_text(text, path), overrides).build()


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Parse a problem file into a :class:`RunConfig` (problem plus solver settings)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read file: {exc.strerror}", str(path)) from None
    return load_text(text, str(path), overrides)
