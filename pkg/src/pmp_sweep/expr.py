"""Expression mini-language for dynamics, payoffs and constraint densities.

Grammar (EBNF)::

    expr   := term (("+" | "-") term)*
    term   := factor (("*" | "/") factor)*
    factor := ["-"] power
    power  := atom ["^" factor]
    atom   := number | identifier | identifier "(" expr ("," expr)* ")"
            | "(" expr ")"

Numbers are decimal doubles with optional exponent (``2``, ``0.5``,
``1e-3``).  Identifiers are ``[A-Za-z_][A-Za-z0-9_]*`` optionally followed
by primes (``x'``, ``x''``), which is how higher-order derivatives are
spelled.  Functions: exp, ln, sin, cos, sqrt, tanh, abs (one argument) and
min, max, pow (two arguments).

At kinks ``min``/``max`` take the derivative of the first argument on ties
and ``abs`` takes the right derivative.
"""

from __future__ import annotations

import builtins
import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from pmp_sweep import dual as D
from pmp_sweep.dual import Dual

UNARY_FUNCTIONS = ("exp", "ln", "sin", "cos", "sqrt", "tanh", "abs")
BINARY_FUNCTIONS = ("min", "max", "pow")
FUNCTIONS = UNARY_FUNCTIONS + BINARY_FUNCTIONS
BINARY_OPS = ("+", "-", "*", "/", "^")


class ExprError(Exception):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int, source: str = ""):
        self.offset = offset
        self.source = source
        super().__init__(f"at byte {offset}: {message}")


class UnboundVariableError(ExprError):
    pass


class ExprDomainError(ExprError):
    def __init__(self, message: str, subexpression: str):
        self.subexpression = subexpression
        super().__init__(f"{message} in {subexpression}")


@dataclass(frozen=True)
class ExprNode:
    """Immutable AST node.

    ``kind`` is one of ``const``, ``var``, ``unary``, ``binary``, ``call``.
    ``name`` carries the variable name, the operator symbol, or the function
    name; ``value`` carries the number of a constant.
    """

    kind: str
    name: str = ""
    value: float = 0.0
    children: tuple["ExprNode", ...] = ()

    def __str__(self) -> str:
        return pretty_print(self)


def const(v: float) -> ExprNode:
    return ExprNode("const", value=float(v))


def var(name: str) -> ExprNode:
    return ExprNode("var", name=name)


def binary(op: str, a: ExprNode, b: ExprNode) -> ExprNode:
    return ExprNode("binary", name=op, children=(a, b))


def neg(a: ExprNode) -> ExprNode:
    return ExprNode("unary", name="-", children=(a,))


def call(fn: str, *args: ExprNode) -> ExprNode:
    return ExprNode("call", name=fn, children=tuple(args))


# --------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*'*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


@dataclass
class _Token:
    kind: str
    text: str
    offset: int  # byte offset into the UTF-8 source


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN.match(source, pos)
        if m is None:
            raise ExprSyntaxError(
                f"unexpected character {source[pos]!r}", _byte_offset(source, pos), source
            )
        if m.lastgroup != "ws":
            tokens.append(_Token(m.lastgroup, m.group(), _byte_offset(source, pos)))
        pos = m.end()
    tokens.append(_Token("end", "", _byte_offset(source, len(source))))
    return tokens


def _byte_offset(source: str, index: int) -> int:
    return len(source[:index].encode("utf-8"))


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens = _tokenize(source)
        self.i = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def error(self, message: str, tok: _Token | None = None):
        tok = tok or self.tok
        raise ExprSyntaxError(message, tok.offset, self.source)

    def accept(self, text: str) -> bool:
        if self.tok.kind == "op" and self.tok.text == text:
            self.i += 1
            return True
        return False

    def expect(self, text: str):
        if not self.accept(text):
            found = self.tok.text or "end of input"
            self.error(f"expected {text!r}, found {found!r}")

    def parse(self) -> ExprNode:
        if self.tok.kind == "end":
            self.error("empty expression")
        node = self.expr()
        if self.tok.kind != "end":
            self.error(f"unexpected {self.tok.text!r}")
        return node

    def expr(self) -> ExprNode:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.tok.text
            self.i += 1
            node = binary(op, node, self.term())
        return node

    def term(self) -> ExprNode:
        node = self.factor()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.tok.text
            self.i += 1
            node = binary(op, node, self.factor())
        return node

    def factor(self) -> ExprNode:
        if self.accept("-"):
            return neg(self.power())
        return self.power()

    def power(self) -> ExprNode:
        base = self.atom()
        if self.accept("^"):
            return binary("^", base, self.factor())
        return base

    def atom(self) -> ExprNode:
        tok = self.tok
        if tok.kind == "number":
            self.i += 1
            return const(float(tok.text))
        if tok.kind == "ident":
            self.i += 1
            if not self.accept("("):
                return var(tok.text)
            if tok.text not in FUNCTIONS:
                self.error(f"unknown function {tok.text!r}", tok)
            args = [self.expr()]
            while self.accept(","):
                args.append(self.expr())
            self.expect(")")
            arity = 1 if tok.text in UNARY_FUNCTIONS else 2
            if len(args) != arity:
                self.error(f"function {tok.text!r} takes {arity} argument(s), got {len(args)}", tok)
            return call(tok.text, *args)
        if self.accept("("):
            node = self.expr()
            self.expect(")")
            return node
        self.error(f"unexpected {tok.text or 'end of input'!r}")


def parse(source: str) -> ExprNode:
    """Parse ``source`` into an :class:`ExprNode` tree."""
    return _Parser(source).parse()


# --------------------------------------------------------------------------
# printing and inspection


def _format_number(v: float) -> str:
    if v.is_integer() and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def pretty_print(node: ExprNode) -> str:
    """Fully parenthesised text that re-parses to an identical tree."""
    k = node.kind
    if k == "const":
        return _format_number(node.value)
    if k == "var":
        return node.name
    if k == "unary":
        return f"(-{pretty_print(node.children[0])})"
    if k == "binary":
        a, b = node.children
        return f"({pretty_print(a)} {node.name} {pretty_print(b)})"
    return f"{node.name}({', '.join(pretty_print(c) for c in node.children)})"


def variables(node: ExprNode) -> set[str]:
    if node.kind == "var":
        return {node.name}
    out: set[str] = set()
    for c in node.children:
        out |= variables(c)
    return out


def substitute(node: ExprNode, mapping: Mapping[str, ExprNode]) -> ExprNode:
    """Replace variables by subtrees (used for parameters and renaming)."""
    if node.kind == "var":
        return mapping.get(node.name, node)
    if not node.children:
        return node
    return ExprNode(
        node.kind, node.name, node.value, tuple(substitute(c, mapping) for c in node.children)
    )


def check_bindable(node: ExprNode, allowed: Iterable[str], where: str = "expression") -> None:
    unknown = variables(node) - set(allowed)
    if unknown:
        raise UnboundVariableError(
            f"{where} {pretty_print(node)} uses unknown variable(s) {sorted(unknown)}"
        )


# --------------------------------------------------------------------------
# scalar evaluation


def _checked(node: ExprNode, fn, *args) -> float:
    try:
        out = fn(*args)
    except ZeroDivisionError:
        raise ExprDomainError("division by zero", pretty_print(node)) from None
    except (ValueError, OverflowError) as exc:
        raise ExprDomainError(f"domain error ({exc})", pretty_print(node)) from None
    if isinstance(out, complex):
        raise ExprDomainError("complex result", pretty_print(node))
    return out


def _ln(x):
    if x <= 0.0:
        raise ValueError("ln of non-positive value")
    return math.log(x)


def _sqrt(x):
    if x < 0.0:
        raise ValueError("sqrt of negative value")
    return math.sqrt(x)


_SCALAR_FUNCS: dict[str, Callable] = {
    "exp": math.exp,
    "ln": _ln,
    "sin": math.sin,
    "cos": math.cos,
    "sqrt": _sqrt,
    "tanh": math.tanh,
    "abs": abs,
    "min": min,
    "max": max,
    "pow": math.pow,
}

_SCALAR_OPS: dict[str, Callable] = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": lambda a, b: a / b,
    "^": math.pow,
}


def eval(node: ExprNode, bindings: Mapping[str, float]) -> float:  # noqa: A001
    """Evaluate ``node`` in IEEE double precision."""
    k = node.kind
    if k == "const":
        return node.value
    if k == "var":
        try:
            return float(bindings[node.name])
        except KeyError:
            raise UnboundVariableError(f"unbound variable {node.name!r}") from None
    args = [eval(c, bindings) for c in node.children]
    if k == "unary":
        return -args[0]
    if k == "binary":
        return _checked(node, _SCALAR_OPS[node.name], *args)
    return _checked(node, _SCALAR_FUNCS[node.name], *args)


# --------------------------------------------------------------------------
# dual / vectorised evaluation

_DUAL_FUNCS: dict[str, Callable] = {
    "exp": D.exp,
    "ln": D.ln,
    "sin": D.sin,
    "cos": D.cos,
    "sqrt": D.sqrt,
    "tanh": D.tanh,
    "abs": D.absolute,
    "min": D.minimum,
    "max": D.maximum,
    "pow": D.power,
}


def _walk_dual(node: ExprNode, env: Mapping[str, Dual]) -> Dual:
    k = node.kind
    if k == "const":
        return Dual(node.value, 0.0)
    if k == "var":
        try:
            return env[node.name]
        except KeyError:
            raise UnboundVariableError(f"unbound variable {node.name!r}") from None
    args = [_walk_dual(c, env) for c in node.children]
    if k == "unary":
        return -args[0]
    if k == "binary":
        a, b = args
        op = node.name
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            return a / b
        return D.power(a, b)
    return _DUAL_FUNCS[node.name](*args)


def eval_dual(node: ExprNode, bindings: Mapping[str, float], seed_var: str) -> Dual:
    """Value and derivative of ``node`` with respect to ``seed_var``."""
    if seed_var not in bindings:
        raise UnboundVariableError(f"seed variable {seed_var!r} is not bound")
    # the scalar walk raises domain errors with the offending subexpression
    value = eval(node, bindings)
    env = {k: Dual(float(v), 1.0 if k == seed_var else 0.0) for k, v in bindings.items()}
    with np.errstate(all="ignore"):
        out = _walk_dual(node, env)
    return Dual(value, float(out.derivative))


def eval_batch(
    node: ExprNode, bindings: Mapping[str, object], seed_var: str | None = None
) -> Dual:
    """Vectorised dual evaluation; bindings may be arrays of a common shape.

    Non-finite results are traced back to the first offending point and
    re-raised through the scalar evaluator so the error names the
    subexpression.
    """
    env = {
        k: Dual(v, 1.0 if k == seed_var else 0.0) for k, v in bindings.items()
    }
    with np.errstate(all="ignore"):
        out = _walk_dual(node, env)
    val = np.asarray(out.value, dtype=float)
    if not np.all(np.isfinite(val)):
        _raise_first_bad(node, bindings, val)
    return out


def _raise_first_bad(node: ExprNode, bindings: Mapping[str, object], val: np.ndarray):
    idx = np.argwhere(~np.isfinite(np.atleast_1d(val)))[0]
    point = {}
    for k, v in bindings.items():
        arr = np.asarray(v, dtype=float)
        point[k] = float(arr[tuple(idx)] if arr.ndim else arr)
    eval(node, point)
    raise ExprDomainError("non-finite value", pretty_print(node))


# --------------------------------------------------------------------------
# compilation to Python callables


def _mangle(name: str) -> str:
    return "v_" + name.replace("'", "_p")


def _to_python(node: ExprNode) -> str:
    k = node.kind
    if k == "const":
        return repr(node.value)
    if k == "var":
        return _mangle(node.name)
    args = [_to_python(c) for c in node.children]
    if k == "unary":
        return f"(-{args[0]})"
    if k == "binary":
        if node.name == "^":
            return f"_pow({args[0]}, {args[1]})"
        return f"({args[0]} {node.name} {args[1]})"
    return f"_{node.name}({', '.join(args)})"


_NUMPY_NS = {
    "_exp": np.exp,
    "_ln": np.log,
    "_sin": np.sin,
    "_cos": np.cos,
    "_sqrt": np.sqrt,
    "_tanh": np.tanh,
    "_abs": np.abs,
    "_min": np.minimum,
    "_max": np.maximum,
    "_pow": np.power,
}


def compile_exprs(
    nodes: Sequence[ExprNode], argnames: Sequence[str], vectorized: bool = False
) -> Callable[..., tuple]:
    """Compile several expressions into one function of positional args.

    The returned callable maps ``(*args)`` to a tuple with one value per
    expression.  The scalar flavour uses :mod:`math` and raises on domain
    errors; the vectorised flavour uses NumPy and propagates NaN.
    """
    params = ", ".join(_mangle(a) for a in argnames)
    body = ", ".join(_to_python(n) for n in nodes)
    src = f"lambda {params}: ({body},)"
    ns = dict(_NUMPY_NS) if vectorized else {"_" + k: v for k, v in _SCALAR_FUNCS.items()}
    return builtins.eval(src, ns)
