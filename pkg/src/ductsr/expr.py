"""Expression trees for candidate equations.

Trees are built from four node types (``Var``, ``Const``, ``BinOp``,
``UnaryOp``) over the input variables ``X, Y, Z, Re``.  All nodes are frozen
dataclasses, so two trees compare equal exactly when they are structurally
identical.

The text grammar shared by the parser and printer::

    expr    := term (('+' | '-') term)*
    term    := factor (('*' | '/') factor)*
    factor  := '-' factor | power
    power   := atom ('**' ('2' | '3' | '4'))*
    atom    := NUMBER | NAME | '(' expr ')'

``**2`` and ``**3`` map to square/cube nodes, ``**4`` to square(square(.)).
Unary minus on a literal folds into the constant; on anything else it
becomes ``-1 * operand``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, fields
from typing import Callable, Iterator, Mapping, Union

import numpy as np

VARIABLES = ("X", "Y", "Z", "Re")
BINARY_OPS = ("+", "-", "*", "/")
UNARY_OPS = ("square", "cube")

_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2}
_POWER_OF = {"square": 2, "cube": 3}


@dataclass(frozen=True)
class Var:
    name: str

    def __post_init__(self):
        if self.name not in VARIABLES:
            raise ValueError(f"unknown variable {self.name!r}")


@dataclass(frozen=True)
class Const:
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"non-finite constant {self.value!r}")
        object.__setattr__(self, "value", float(self.value))


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expression"
    right: "Expression"

    def __post_init__(self):
        if self.op not in BINARY_OPS:
            raise ValueError(f"unknown binary operator {self.op!r}")


@dataclass(frozen=True)
class UnaryOp:
    op: str
    child: "Expression"

    def __post_init__(self):
        if self.op not in UNARY_OPS:
            raise ValueError(f"unknown unary operator {self.op!r}")


Expression = Union[Var, Const, BinOp, UnaryOp]


def children(e: Expression) -> tuple:
    if isinstance(e, BinOp):
        return (e.left, e.right)
    if isinstance(e, UnaryOp):
        return (e.child,)
    return ()


def iter_nodes(e: Expression) -> Iterator[Expression]:
    """Pre-order traversal."""
    stack = [e]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(children(node)))


def complexity(e: Expression) -> int:
    """Node count; every variable, constant and operator counts once."""
    return sum(1 for _ in iter_nodes(e))


def depth(e: Expression) -> int:
    kids = children(e)
    return 1 + (max(depth(k) for k in kids) if kids else 0)


def violates_nesting(e: Expression) -> bool:
    """True if some square/cube node sits directly on another one."""
    return any(
        isinstance(n, UnaryOp) and isinstance(n.child, UnaryOp) for n in iter_nodes(e)
    )


def constants(e: Expression) -> list[float]:
    return [n.value for n in iter_nodes(e) if isinstance(n, Const)]


def with_constants(e: Expression, values) -> Expression:
    """Rebuild ``e`` with its constants replaced, in pre-order."""
    it = iter(values)

    def rebuild(node):
        if isinstance(node, Const):
            return Const(float(next(it)))
        if isinstance(node, BinOp):
            left = rebuild(node.left)
            return BinOp(node.op, left, rebuild(node.right))
        if isinstance(node, UnaryOp):
            return UnaryOp(node.op, rebuild(node.child))
        return node

    out = rebuild(e)
    if next(it, None) is not None:
        raise ValueError("too many constant values")
    return out


# --------------------------------------------------------------------------
# evaluation


def _eval(e, env):
    if isinstance(e, Var):
        return env[e.name]
    if isinstance(e, Const):
        return e.value
    if isinstance(e, UnaryOp):
        v = _eval(e.child, env)
        return v * v if e.op == "square" else v * v * v
    a = _eval(e.left, env)
    b = _eval(e.right, env)
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    if e.op == "*":
        return a * b
    return np.divide(a, b)


def evaluate_batch(e: Expression, columns: Mapping[str, np.ndarray]) -> np.ndarray:
    """Evaluate over columns keyed by variable name.

    Division is unprotected; singular points come back as inf/nan rather
    than raising.
    """
    n = len(next(iter(columns.values()))) if columns else 1
    with np.errstate(all="ignore"):
        out = _eval(e, {k: np.asarray(v, dtype=float) for k, v in columns.items()})
    return np.broadcast_to(np.asarray(out, dtype=float), (n,)).copy()


def evaluate(e: Expression, point: Mapping[str, float]) -> float:
    """Evaluate at one point.  Check the result with ``math.isfinite``."""
    with np.errstate(all="ignore"):
        env = {k: np.float64(v) for k, v in point.items()}
        return float(_eval(e, env))


def compile_expression(e: Expression) -> tuple[Callable, np.ndarray]:
    """Compile to ``f(env, c)`` with the constants lifted into vector ``c``.

    Used by the constant optimizer: the tree shape is fixed and only ``c``
    changes between calls.
    """
    consts = []

    def emit(node):
        if isinstance(node, Var):
            return f"env[{node.name!r}]"
        if isinstance(node, Const):
            consts.append(node.value)
            return f"c[{len(consts) - 1}]"
        if isinstance(node, UnaryOp):
            inner = emit(node.child)
            fn = "square" if node.op == "square" else "cube"
            return f"{fn}({inner})"
        left = emit(node.left)
        right = emit(node.right)
        return f"({left} {node.op} {right})"

    src = emit(e)
    namespace = {"square": np.square, "cube": _cube}
    fn = eval(f"lambda env, c: {src}", namespace)  # noqa: S307 - generated from a typed tree
    return fn, np.array(consts, dtype=float)


def _cube(v):
    return v * v * v


# --------------------------------------------------------------------------
# features


@dataclass(frozen=True)
class ExprFeatures:
    contains_x: bool = False
    contains_y: bool = False
    contains_z: bool = False
    contains_re: bool = False
    has_x2: bool = False
    has_y2: bool = False
    has_z2: bool = False
    has_x3: bool = False
    has_y3: bool = False
    has_z3: bool = False
    has_x4: bool = False
    has_y4: bool = False
    has_z4: bool = False
    nested: bool = False

    def names(self) -> set[str]:
        """Short names of the set flags: ``re``, ``y2``, ``x4``, ``nested``..."""
        out = set()
        for f in fields(self):
            if getattr(self, f.name):
                out.add(f.name.split("_", 1)[1] if "_" in f.name else f.name)
        return out

    @classmethod
    def from_names(cls, names) -> "ExprFeatures":
        kwargs = {}
        for name in names:
            key = feature_field(name)
            kwargs[key] = True
        return cls(**kwargs)


FEATURE_NAMES = (
    "x", "y", "z", "re",
    "x2", "y2", "z2", "x3", "y3", "z3", "x4", "y4", "z4",
    "nested",
)


def feature_field(name: str) -> str:
    """Map a short feature name (``y2``) to its ExprFeatures field."""
    if name not in FEATURE_NAMES:
        raise KeyError(f"unknown feature {name!r}")
    if name == "nested":
        return "nested"
    if name in ("x", "y", "z", "re"):
        return f"contains_{name}"
    return f"has_{name}"


def extract_features(e: Expression) -> ExprFeatures:
    """Syntactic feature scan.  No algebra: ``Y*Y`` does not count as Y**2."""
    flags = {}
    for node in iter_nodes(e):
        if isinstance(node, Var):
            flags[f"contains_{node.name.lower()}"] = True
        elif isinstance(node, UnaryOp):
            child = node.child
            if isinstance(child, UnaryOp):
                flags["nested"] = True
            if isinstance(child, Var) and child.name != "Re":
                flags[f"has_{child.name.lower()}{_POWER_OF[node.op]}"] = True
            if (
                node.op == "square"
                and isinstance(child, UnaryOp)
                and child.op == "square"
                and isinstance(child.child, Var)
                and child.child.name != "Re"
            ):
                flags[f"has_{child.child.name.lower()}4"] = True
    return ExprFeatures(**flags)


# --------------------------------------------------------------------------
# printing


def _format_number(v: float) -> str:
    text = repr(float(v))
    if text.endswith(".0"):
        text = text[:-2]
    return text


def to_string(e: Expression) -> str:
    """Canonical infix text; ``parse(to_string(e)) == e`` for every tree."""
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Const):
        text = _format_number(e.value)
        # -0.0 must keep its sign through a round trip
        return f"({text})" if text.startswith("-") else text
    if isinstance(e, UnaryOp):
        inner = to_string(e.child)
        if isinstance(e.child, BinOp):
            inner = f"({inner})"
        return f"{inner}**{_POWER_OF[e.op]}"
    prec = _PRECEDENCE[e.op]
    left = to_string(e.left)
    right = to_string(e.right)
    if isinstance(e.left, BinOp) and _PRECEDENCE[e.left.op] < prec:
        left = f"({left})"
    if isinstance(e.right, BinOp) and _PRECEDENCE[e.right.op] <= prec:
        right = f"({right})"
    return f"{left}{e.op}{right}"


# --------------------------------------------------------------------------
# parsing


class ExprSyntaxError(ValueError):
    def __init__(self, message: str, position: int, text: str = ""):
        super().__init__(f"{message} at position {position}")
        self.position = position
        self.text = text


class UnknownIdentifierError(ExprSyntaxError):
    pass


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/()]))"
)
_VAR_LOOKUP = {v.lower(): v for v in VARIABLES}


def _tokenize(text: str):
    pos = 0
    tokens = []
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            break
        m = _TOKEN_RE.match(text, pos)
        if not m or m.end() == pos:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", pos, text)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message, tok=None):
        tok = tok or self.peek()
        shown = tok[1] or "end of input"
        return ExprSyntaxError(f"{message} (got {shown!r})", tok[2], self.text)

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            raise self.error("unexpected token")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.factor())
        return node

    def factor(self):
        if self.peek() == ("op", "-", self.peek()[2]):
            self.take()
            operand = self.factor()
            if isinstance(operand, Const):
                return Const(-operand.value)
            return BinOp("*", Const(-1.0), operand)
        return self.power()

    def power(self):
        node = self.atom()
        while self.peek()[1] == "**":
            self.take()
            tok = self.take()
            if tok[0] != "num" or tok[1] not in ("2", "3", "4"):
                raise self.error("exponent must be 2, 3 or 4", tok)
            if tok[1] == "2":
                node = UnaryOp("square", node)
            elif tok[1] == "3":
                node = UnaryOp("cube", node)
            else:
                node = UnaryOp("square", UnaryOp("square", node))
        return node

    def atom(self):
        tok = self.take()
        kind, value, pos = tok
        if kind == "num":
            v = float(value)
            if not math.isfinite(v):
                raise ExprSyntaxError("numeric literal out of range", pos, self.text)
            return Const(v)
        if kind == "name":
            name = _VAR_LOOKUP.get(value.lower())
            if name is None:
                raise UnknownIdentifierError(f"unknown identifier {value!r}", pos, self.text)
            return Var(name)
        if value == "(":
            node = self.expr()
            if self.peek()[1] != ")":
                raise self.error("expected ')'")
            self.take()
            return node
        raise self.error("expected a number, variable or '('", tok)


def parse(text: str) -> Expression:
    """Parse infix text into a tree.  Variable names are case-insensitive."""
    return _Parser(text).parse()
