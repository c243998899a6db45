"""Scalar expression language used for test functions, charts and fixtures.

Grammar (whitespace-insensitive)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := "-" unary | "+" unary | power
    power   := primary ("^" unary)?          # exponent: constant, integer >= 0
    primary := NUMBER | "pi" | VAR | FUNC "(" expr ")" | "(" expr ")"
    VAR     := <prefix><k>                   # k = 1..dim, prefix defaults to "x"
    FUNC    := "exp" | "ln" | "sin" | "cos" | "sqrt"

Precedence is ``^`` > unary minus > ``*``/``/`` > ``+``/``-``; binary operators
associate to the left, ``^`` to the right.  Exponents must fold to a
non-negative integer so that derivative jets stay closed-form; real powers of a
positive base can be written as ``exp(k*ln(s))``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

UNARY_FUNCS = ("exp", "ln", "sin", "cos", "sqrt")
BINARY_OPS = ("+", "-", "*", "/")


class ExprError(ValueError):
    """Base class for expression parsing and evaluation errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownIdentifierError(ExprSyntaxError):
    pass


class VariableIndexError(ExprSyntaxError):
    pass


class ExponentError(ExprSyntaxError):
    pass


class DomainError(ExprError, ArithmeticError):
    """Raised when an operand leaves the natural domain of an operation."""

    def __init__(self, message: str, node: "Node", point=None):
        super().__init__(f"{message} in {to_source(node)}")
        self.node = node
        self.point = point


# ---------------------------------------------------------------------------
# AST nodes


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # zero-based


@dataclass(frozen=True)
class Unary:
    op: str  # "neg" or a name from UNARY_FUNCS
    arg: "Node"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Pow:
    base: "Node"
    exponent: int


Node = Union[Const, Var, Unary, Binary, Pow]


@dataclass(frozen=True)
class ExprAst:
    """Immutable parsed expression over ``dim`` variables."""

    root: Node
    dim: int
    prefix: str = "x"

    def __call__(self, points) -> np.ndarray | float:
        return evaluate(self, points)

    def __str__(self) -> str:
        return to_source(self.root, self.prefix)

    @property
    def source(self) -> str:
        return str(self)


# ---------------------------------------------------------------------------
# Tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    offset: int  # byte offset into the UTF-8 source


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    pos = 0
    byte_pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {source[pos]!r}", byte_pos)
        text = m.group()
        if m.lastgroup != "ws":
            tokens.append(_Token(m.lastgroup, text, byte_pos))
        byte_pos += len(text.encode("utf-8"))
        pos = m.end()
    tokens.append(_Token("eof", "", byte_pos))
    return tokens


# ---------------------------------------------------------------------------
# Parser


class _Parser:
    def __init__(self, source: str, dim: int, prefix: str):
        self.tokens = _tokenize(source)
        self.pos = 0
        self.dim = dim
        self.var_re = re.compile(rf"{re.escape(prefix)}(\d+)")

    @property
    def tok(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        t = self.tokens[self.pos]
        self.pos += 1
        return t

    def expect(self, text: str) -> None:
        if self.tok.text != text:
            found = self.tok.text or "end of input"
            raise ExprSyntaxError(f"expected {text!r}, found {found!r}", self.tok.offset)
        self.advance()

    def parse(self) -> Node:
        node = self.expr()
        if self.tok.kind != "eof":
            raise ExprSyntaxError(f"unexpected {self.tok.text!r}", self.tok.offset)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.tok.text in ("+", "-"):
            op = self.advance().text
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.tok.text in ("*", "/"):
            op = self.advance().text
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.tok.text == "-":
            self.advance()
            return Unary("neg", self.unary())
        if self.tok.text == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self) -> Node:
        base = self.primary()
        if self.tok.text != "^":
            return base
        self.advance()
        start = self.tok.offset
        exponent = self.unary()
        return Pow(base, _fold_exponent(exponent, start))

    def primary(self) -> Node:
        t = self.tok
        if t.kind == "number":
            self.advance()
            value = float(t.text)
            if not math.isfinite(value):
                raise ExprSyntaxError(f"number {t.text} out of range", t.offset)
            return Const(value)
        if t.kind == "ident":
            self.advance()
            if t.text in UNARY_FUNCS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Unary(t.text, arg)
            if t.text == "pi":
                return Const(math.pi)
            m = self.var_re.fullmatch(t.text)
            if m is not None:
                k = int(m.group(1))
                if not 1 <= k <= self.dim:
                    raise VariableIndexError(
                        f"variable {t.text} out of range for dim {self.dim}", t.offset
                    )
                return Var(k - 1)
            raise UnknownIdentifierError(f"unknown identifier {t.text!r}", t.offset)
        if t.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        found = t.text or "end of input"
        raise ExprSyntaxError(f"expected operand, found {found!r}", t.offset)


def _fold_exponent(node: Node, offset: int) -> int:
    if _has_var(node):
        raise ExponentError("exponent must be a constant non-negative integer", offset)
    try:
        value = float(_eval_node(node, np.zeros((1, 0)))[0])
    except DomainError:
        raise ExponentError("exponent is not a finite constant", offset) from None
    if not (math.isfinite(value) and value >= 0 and value.is_integer()):
        raise ExponentError(f"non-integer or negative exponent {value!r}", offset)
    return int(value)


def _has_var(node: Node) -> bool:
    if isinstance(node, Var):
        return True
    if isinstance(node, Const):
        return False
    if isinstance(node, Unary):
        return _has_var(node.arg)
    if isinstance(node, Pow):
        return _has_var(node.base)
    return _has_var(node.left) or _has_var(node.right)


def parse(source: str, dim: int, prefix: str = "x") -> ExprAst:
    """Parse ``source`` into an :class:`ExprAst` over ``prefix1..prefix<dim>``."""
    if dim < 0:
        raise ValueError("dim must be non-negative")
    root = _Parser(source, dim, prefix).parse()
    return ExprAst(root, dim, prefix)


# ---------------------------------------------------------------------------
# Evaluation


def _eval_node(node: Node, pts: np.ndarray) -> np.ndarray:
    if isinstance(node, Const):
        return np.full(pts.shape[0], node.value)
    if isinstance(node, Var):
        return pts[:, node.index].astype(float, copy=True)
    if isinstance(node, Unary):
        a = _eval_node(node.arg, pts)
        op = node.op
        if op == "neg":
            return -a
        if op == "exp":
            return np.exp(a)
        if op == "sin":
            return np.sin(a)
        if op == "cos":
            return np.cos(a)
        if op == "ln":
            bad = ~(a > 0)
            if bad.any():
                raise DomainError("ln of non-positive value", node, pts[np.argmax(bad)])
            return np.log(a)
        if op == "sqrt":
            bad = ~(a >= 0)
            if bad.any():
                raise DomainError("sqrt of negative value", node, pts[np.argmax(bad)])
            return np.sqrt(a)
        raise ValueError(f"unknown unary op {op}")
    if isinstance(node, Pow):
        return _eval_node(node.base, pts) ** node.exponent
    a = _eval_node(node.left, pts)
    b = _eval_node(node.right, pts)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    bad = b == 0
    if bad.any():
        raise DomainError("division by zero", node, pts[np.argmax(bad)])
    return a / b


def as_points(points, dim: int) -> tuple[np.ndarray, bool]:
    """Return an ``(N, dim)`` float array and whether the input was one point."""
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    if single:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {np.shape(points)}")
    return pts, single


def evaluate(ast: ExprAst, points) -> np.ndarray | float:
    """Evaluate at one point (returns float) or a batch ``(N, dim)`` (returns array)."""
    pts, single = as_points(points, ast.dim)
    with np.errstate(all="ignore"):
        out = _eval_node(ast.root, pts)
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# Printing and substitution


def to_source(node: Node | ExprAst, prefix: str = "x") -> str:
    """Fully parenthesised source text; reparses to a structurally equal tree."""
    if isinstance(node, ExprAst):
        return to_source(node.root, node.prefix)
    if isinstance(node, Const):
        return repr(node.value) if node.value >= 0 else f"(-{-node.value!r})"
    if isinstance(node, Var):
        return f"{prefix}{node.index + 1}"
    if isinstance(node, Unary):
        inner = to_source(node.arg, prefix)
        return f"(-{inner})" if node.op == "neg" else f"{node.op}({inner})"
    if isinstance(node, Pow):
        return f"({to_source(node.base, prefix)}^{node.exponent})"
    return f"({to_source(node.left, prefix)} {node.op} {to_source(node.right, prefix)})"


def _subst(node: Node, repl: Sequence[Node]) -> Node:
    if isinstance(node, Var):
        return repl[node.index]
    if isinstance(node, Const):
        return node
    if isinstance(node, Unary):
        return Unary(node.op, _subst(node.arg, repl))
    if isinstance(node, Pow):
        return Pow(_subst(node.base, repl), node.exponent)
    return Binary(node.op, _subst(node.left, repl), _subst(node.right, repl))


def substitute(ast: ExprAst, replacements: Sequence[ExprAst]) -> ExprAst:
    """Compose ``ast`` with the map whose coordinates are ``replacements``."""
    if len(replacements) != ast.dim:
        raise ValueError("need one replacement per variable")
    dims = {r.dim for r in replacements}
    if len(dims) > 1:
        raise ValueError("replacements must share a dimension")
    dim = dims.pop() if dims else 0
    prefix = replacements[0].prefix if replacements else ast.prefix
    return ExprAst(_subst(ast.root, [r.root for r in replacements]), dim, prefix)


def linear_map(matrix, offset=None, prefix: str = "x") -> list[ExprAst]:
    """Coordinates of ``u -> matrix @ u + offset`` as expressions (for conjugation)."""
    matrix = np.asarray(matrix, dtype=float)
    n_out, n_in = matrix.shape
    offset = np.zeros(n_out) if offset is None else np.asarray(offset, dtype=float)
    out = []
    for i in range(n_out):
        node: Node = Const(abs(float(offset[i])))
        if offset[i] < 0:
            node = Unary("neg", node)
        for j in range(n_in):
            coef = float(matrix[i, j])
            term = Binary("*", Const(abs(coef)), Var(j))
            node = Binary("-" if coef < 0 else "+", node, term)
        out.append(ExprAst(node, n_in, prefix))
    return out
