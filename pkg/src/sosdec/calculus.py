"""Exact second-order derivative jets of expressions, and Gauss-Legendre rules.

Jets are propagated forward through the expression tree with the usual chain
rules for value, gradient and Hessian, vectorised over a batch of points.
There is no truncation error: the only error is floating-point rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .exprparse import Binary, Const, DomainError, ExprAst, Node, Pow, Unary, Var, as_points


@dataclass(frozen=True, eq=False)
class Jet2:
    """Value, gradient and Hessian at one point or a batch of points.

    For a single point the shapes are ``()``, ``(d,)``, ``(d, d)``; for a batch
    of ``N`` points they gain a leading axis.
    """

    value: np.ndarray | float
    gradient: np.ndarray
    hessian: np.ndarray


class _J:
    # g / h are None for quantities with vanishing derivatives (constants)
    __slots__ = ("v", "g", "h")

    def __init__(self, v, g=None, h=None):
        self.v = v
        self.g = g
        self.h = h


def _outer(a, b):
    return a[:, :, None] * b[:, None, :]


def _scale_h(s, h):
    return None if h is None else s[:, None, None] * h


def _add(x, y):
    if x is None:
        return y
    if y is None:
        return x
    return x + y


def _chain(a: _J, v, d1, d2) -> _J:
    """Compose a scalar function (derivatives d1, d2 at a.v) with jet ``a``."""
    if a.g is None:
        return _J(v)
    g = d1[:, None] * a.g
    h = d2[:, None, None] * _outer(a.g, a.g)
    if a.h is not None:
        h = h + d1[:, None, None] * a.h
    return _J(v, g, h)


def _jet(node: Node, pts: np.ndarray) -> _J:
    n, d = pts.shape
    if isinstance(node, Const):
        return _J(np.full(n, node.value))
    if isinstance(node, Var):
        g = np.zeros((n, d))
        g[:, node.index] = 1.0
        return _J(pts[:, node.index].astype(float, copy=True), g)
    if isinstance(node, Pow):
        a = _jet(node.base, pts)
        k = node.exponent
        if k == 0:
            return _J(np.ones(n))
        if k == 1:
            return a
        v = a.v**k
        d1 = k * a.v ** (k - 1)
        d2 = k * (k - 1) * a.v ** (k - 2)
        return _chain(a, v, d1, d2)
    if isinstance(node, Unary):
        a = _jet(node.arg, pts)
        x = a.v
        op = node.op
        if op == "neg":
            return _J(-x, None if a.g is None else -a.g, None if a.h is None else -a.h)
        if op == "exp":
            e = np.exp(x)
            return _chain(a, e, e, e)
        if op == "sin":
            s, c = np.sin(x), np.cos(x)
            return _chain(a, s, c, -s)
        if op == "cos":
            s, c = np.sin(x), np.cos(x)
            return _chain(a, c, -s, -c)
        if op == "ln":
            bad = ~(x > 0)
            if bad.any():
                raise DomainError("ln of non-positive value", node, pts[np.argmax(bad)])
            return _chain(a, np.log(x), 1.0 / x, -1.0 / x**2)
        if op == "sqrt":
            bad = ~(x > 0)
            if bad.any():
                raise DomainError("sqrt jet at non-positive value", node, pts[np.argmax(bad)])
            r = np.sqrt(x)
            return _chain(a, r, 0.5 / r, -0.25 / (r * x))
        raise ValueError(f"unknown unary op {op}")
    if isinstance(node, Binary):
        a = _jet(node.left, pts)
        b = _jet(node.right, pts)
        op = node.op
        if op in ("+", "-"):
            sign = 1.0 if op == "+" else -1.0
            gb = None if b.g is None else sign * b.g
            hb = None if b.h is None else sign * b.h
            return _J(a.v + sign * b.v, _add(a.g, gb), _add(a.h, hb))
        if op == "/":
            bad = b.v == 0
            if bad.any():
                raise DomainError("division by zero", node, pts[np.argmax(bad)])
            inv = 1.0 / b.v
            b = _chain(b, inv, -(inv**2), 2.0 * inv**3)
        # product rule
        v = a.v * b.v
        g = _add(None if a.g is None else b.v[:, None] * a.g,
                 None if b.g is None else a.v[:, None] * b.g)
        h = _add(_scale_h(b.v, a.h), _scale_h(a.v, b.h))
        if a.g is not None and b.g is not None:
            h = _add(h, _outer(a.g, b.g) + _outer(b.g, a.g))
        return _J(v, g, h)
    raise TypeError(f"not an expression node: {node!r}")


def jet2(ast: ExprAst, point) -> Jet2:
    """Value, gradient and Hessian of ``ast`` at ``point`` (or a batch of points)."""
    pts, single = as_points(point, ast.dim)
    n, d = pts.shape
    with np.errstate(all="ignore"):
        j = _jet(ast.root, pts)
    g = np.zeros((n, d)) if j.g is None else j.g
    h = np.zeros((n, d, d)) if j.h is None else 0.5 * (j.h + j.h.transpose(0, 2, 1))
    if single:
        return Jet2(float(j.v[0]), g[0], h[0])
    return Jet2(j.v, g, h)


def jacobian(coords: tuple[ExprAst, ...] | list[ExprAst], point) -> np.ndarray:
    """Jacobian of the map whose coordinates are ``coords``; shape ``(out, in)``.

    With a batch of points the result has shape ``(N, out, in)``.
    """
    pts, single = as_points(point, coords[0].dim)
    with np.errstate(all="ignore"):
        rows = []
        for c in coords:
            j = _jet(c.root, pts)
            rows.append(np.zeros(pts.shape) if j.g is None else j.g)
    jac = np.stack(rows, axis=1)
    return jac[0] if single else jac


# ---------------------------------------------------------------------------
# Quadrature


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Gauss-Legendre rule on [0, 1]; exact for polynomials of degree <= 2n-1."""

    nodes: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return len(self.nodes)


@lru_cache(maxsize=None)
def gauss_legendre(n: int) -> QuadratureRule:
    if n < 1:
        raise ValueError("rule needs at least one node")
    x, w = np.polynomial.legendre.leggauss(n)
    nodes = 0.5 * (x + 1.0)
    weights = 0.5 * w
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes, weights)


def integrate_matrix(g: Callable[[float], np.ndarray], rule: QuadratureRule) -> np.ndarray:
    """Approximate ``int_0^1 g(t) dt`` for a symmetric-matrix-valued ``g``."""
    total = None
    for t, w in zip(rule.nodes, rule.weights):
        term = w * np.asarray(g(float(t)), dtype=float)
        total = term if total is None else total + term
    return 0.5 * (total + np.swapaxes(total, -1, -2))
