"""Zero-set components, tangent spaces, adapted frames and chart atlases."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .calculus import jacobian, jet2
from .exprparse import ExprAst, Var, parse


class GeometryError(ValueError):
    pass


class RankDeficiencyError(GeometryError):
    """The chart differential is not injective (not an immersion) at a point."""


class SeparationError(GeometryError):
    """Two declared components touch or overlap."""


class ZeroSetError(GeometryError):
    """A declared zero is not a zero (or not a critical point) of f."""


def _rank_threshold(svals: np.ndarray, eps_rank: float) -> float:
    return eps_rank * ((svals.max() if svals.size else 0.0) + 1.0)


# ---------------------------------------------------------------------------
# Components


@dataclass(frozen=True, eq=False)
class ZeroComponent:
    """One connected component of the zero set: an isolated point or a chart.

    A chart maps the open box ``(lo, hi)`` of R^k into R^d through coordinate
    expressions in ``t1..tk``.  ``declared_d0`` is the dimension the user claims
    for the component; it defaults to ``k`` and may only be overridden by 0
    (claiming the sampled points are isolated zeros).
    """

    kind: str
    ambient_dim: int
    location: np.ndarray | None = None
    coords: tuple[ExprAst, ...] = ()
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    regularity: int = 2
    declared_d0: int | None = None
    name: str = ""

    @classmethod
    def point(cls, location, name: str = "") -> "ZeroComponent":
        loc = np.array(location, dtype=float)
        loc.setflags(write=False)
        return cls("point", loc.size, location=loc, name=name)

    @classmethod
    def chart(
        cls,
        coords: Sequence[str | ExprAst],
        domain: Sequence[Sequence[float]],
        *,
        declared_d0: int | None = None,
        regularity: int = 2,
        name: str = "",
    ) -> "ZeroComponent":
        k = len(domain)
        exprs = tuple(c if isinstance(c, ExprAst) else parse(c, k, prefix="t") for c in coords)
        if any(e.dim != k for e in exprs):
            raise GeometryError("chart coordinates must all use the parameters t1..tk")
        lo = np.array([float(a) for a, _ in domain])
        hi = np.array([float(b) for _, b in domain])
        if not np.all(lo < hi):
            raise GeometryError("empty parameter box")
        if k > len(exprs):
            raise GeometryError("chart parameter dimension exceeds ambient dimension")
        if declared_d0 is not None and declared_d0 not in (0, k):
            raise GeometryError("declared_d0 must equal the chart dimension or be 0")
        if regularity < 1:
            raise GeometryError("declared regularity must be >= 1")
        return cls("chart", len(exprs), coords=exprs, lo=lo, hi=hi,
                   regularity=regularity, declared_d0=declared_d0, name=name)

    @property
    def param_dim(self) -> int:
        return 0 if self.kind == "point" else len(self.lo)

    @property
    def d0(self) -> int:
        if self.declared_d0 is not None:
            return self.declared_d0
        return self.param_dim

    def image(self, ts) -> np.ndarray:
        """Map parameters ``(N, k)`` to points ``(N, d)``."""
        if self.kind == "point":
            n = 1 if ts is None else max(len(np.atleast_2d(ts)), 1)
            return np.tile(self.location, (n, 1))
        ts = np.atleast_2d(np.asarray(ts, dtype=float))
        return np.stack([np.asarray(c(ts)) for c in self.coords], axis=1)

    def to_dict(self) -> dict:
        if self.kind == "point":
            return {"kind": "point", "location": [float(v) for v in self.location]}
        out = {
            "kind": "chart",
            "coords": [str(c) for c in self.coords],
            "domain": [[float(a), float(b)] for a, b in zip(self.lo, self.hi)],
            "regularity": self.regularity,
        }
        if self.declared_d0 is not None:
            out["d0"] = self.declared_d0
        return out


def sample_parameters(comp: ZeroComponent, n: int) -> np.ndarray:
    """Uniform grid ``lo + k (hi - lo) / m`` with ``m^k >= n`` nodes per box."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if comp.kind == "point":
        return np.zeros((1, 0))
    k = comp.param_dim
    m = 1
    while m**k < n:
        m += 1
    axes = [comp.lo[i] + (comp.hi[i] - comp.lo[i]) * np.arange(m) / m for i in range(k)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def sample_component(comp: ZeroComponent, n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """``(parameter, point)`` pairs on a uniform grid (a point component yields itself)."""
    ts = sample_parameters(comp, n)
    xs = comp.image(ts)
    return list(zip(ts, xs))


def tangent_basis(comp: ZeroComponent, t, eps_rank: float = 1e-8) -> np.ndarray:
    """Columns spanning the tangent space: the chart Jacobian at ``t`` (shape d x d0)."""
    if comp.kind == "point":
        return np.zeros((comp.ambient_dim, 0))
    jac = jacobian(comp.coords, np.asarray(t, dtype=float))
    svals = np.linalg.svd(jac, compute_uv=False)
    if svals.min() < _rank_threshold(svals, eps_rank):
        raise RankDeficiencyError(
            f"chart differential not injective at t={np.asarray(t).tolist()} "
            f"(singular values {svals.tolist()})"
        )
    return jac


def normalize_signs(mat: np.ndarray) -> np.ndarray:
    """Flip columns so the first entry above rounding level is positive."""
    out = np.array(mat, dtype=float, copy=True)
    for j in range(out.shape[1]):
        col = out[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-12)
        if nz.size and col[nz[0]] < 0:
            out[:, j] = -col
    return out


@dataclass(frozen=True, eq=False)
class AdaptedFrame:
    """Orthonormal basis ``[P1 P2]`` of R^d with P1 normal and P2 tangent at ``x0``."""

    x0: np.ndarray
    P1: np.ndarray
    P2: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.x0)

    @property
    def d0(self) -> int:
        return self.P2.shape[1]

    @property
    def d1(self) -> int:
        return self.P1.shape[1]

    @property
    def P(self) -> np.ndarray:
        return np.hstack([self.P1, self.P2])

    def to_frame(self, u) -> tuple[np.ndarray, np.ndarray]:
        """Inverse isometry: ambient points -> (normal, tangent) coordinates."""
        delta = np.atleast_2d(np.asarray(u, dtype=float)) - self.x0
        return delta @ self.P1, delta @ self.P2

    def from_frame(self, xp, yp) -> np.ndarray:
        xp = np.atleast_2d(np.asarray(xp, dtype=float))
        yp = np.atleast_2d(np.asarray(yp, dtype=float))
        if yp.shape[1] == 0:
            yp = np.zeros((xp.shape[0], 0))
        return self.x0 + xp @ self.P1.T + yp @ self.P2.T

    def aligned(self, hessian: np.ndarray) -> "AdaptedFrame":
        """Rotate P1 onto eigenvectors of ``P1^T H P1``, eigenvalues descending."""
        if self.d1 == 0:
            return self
        hr = self.P1.T @ hessian @ self.P1
        hr = 0.5 * (hr + hr.T)
        w, v = np.linalg.eigh(hr)
        order = np.argsort(-w, kind="stable")
        p1 = normalize_signs(self.P1 @ v[:, order])
        return AdaptedFrame(self.x0, p1, self.P2)


def adapted_frame(comp: ZeroComponent | None, x0, tangent: np.ndarray) -> AdaptedFrame:
    """Orthonormal frame adapted to normal space (+) tangent space at ``x0``."""
    x0 = np.array(x0, dtype=float)
    d = len(x0)
    tangent = np.asarray(tangent, dtype=float).reshape(d, -1)
    d0 = tangent.shape[1]
    if d0 == 0:
        return AdaptedFrame(x0, np.eye(d), np.zeros((d, 0)))
    q, _ = np.linalg.qr(tangent, mode="complete")
    p2 = normalize_signs(q[:, :d0])
    p1 = normalize_signs(q[:, d0:])
    return AdaptedFrame(x0, p1, p2)


# ---------------------------------------------------------------------------
# Zero set


@dataclass(frozen=True, eq=False)
class ZeroSetDescription:
    components: tuple[ZeroComponent, ...]
    ambient_dim: int

    def __post_init__(self):
        if not self.components:
            raise GeometryError("zero set needs at least one component")
        for c in self.components:
            if c.ambient_dim != self.ambient_dim:
                raise GeometryError("component dimension does not match ambient dimension")

    @property
    def is_discrete(self) -> bool:
        return all(c.d0 == 0 for c in self.components)

    def validate(self, f: ExprAst, n: int = 32, tol_zero: float = 1e-10,
                 tol_grad: float = 1e-8) -> None:
        """Check ``f ~ 0`` and ``grad f ~ 0`` at sampled points of every component."""
        for i, comp in enumerate(self.components):
            xs = comp.image(sample_parameters(comp, n))
            j = jet2(f, xs)
            vals = np.abs(j.value)
            grads = np.linalg.norm(j.gradient, axis=1)
            if vals.max() > tol_zero:
                k = int(np.argmax(vals))
                raise ZeroSetError(f"component {i}: f = {vals[k]:.3e} at {xs[k].tolist()}")
            if grads.max() > tol_grad:
                k = int(np.argmax(grads))
                raise ZeroSetError(f"component {i}: |grad f| = {grads[k]:.3e} at {xs[k].tolist()}")

    def separations(self, n: int = 256) -> np.ndarray:
        """Symmetric matrix of sampled distances between component images."""
        pts = [c.image(sample_parameters(c, n)) for c in self.components]
        m = len(pts)
        dist = np.zeros((m, m))
        for i in range(m):
            for j in range(i + 1, m):
                diff = pts[i][:, None, :] - pts[j][None, :, :]
                dist[i, j] = dist[j, i] = np.sqrt((diff**2).sum(-1)).min()
        return dist


# ---------------------------------------------------------------------------
# Charts and atlases (manifold mode)


@dataclass(frozen=True, eq=False)
class Chart:
    """A parametrisation ``w -> embed(w)`` of part of a manifold in R^D.

    ``inverse`` maps ambient points back to chart coordinates and ``margin``
    is positive where the chart is usable (larger means farther from its cut).
    ``lipschitz`` bounds the operator norm of the differential of ``embed``, so
    a ball of radius r in chart coordinates has ambient diameter <= 2 r L.
    """

    name: str
    embed: tuple[ExprAst, ...]
    inverse: Callable[[np.ndarray], np.ndarray]
    margin: Callable[[np.ndarray], np.ndarray]
    lipschitz: float = 1.0

    @property
    def dim(self) -> int:
        return self.embed[0].dim

    @property
    def ambient_dim(self) -> int:
        return len(self.embed)

    def to_ambient(self, w) -> np.ndarray:
        w = np.atleast_2d(np.asarray(w, dtype=float))
        return np.stack([np.asarray(c(w)) for c in self.embed], axis=1)

    def differential(self, w) -> np.ndarray:
        return jacobian(self.embed, np.asarray(w, dtype=float))


def identity_chart(dim: int) -> Chart:
    embed = tuple(ExprAst(Var(i), dim) for i in range(dim))

    def inverse(x):
        return np.atleast_2d(np.asarray(x, dtype=float))

    def margin(x):
        return np.full(len(np.atleast_2d(x)), np.inf)

    return Chart("identity", embed, inverse, margin)


@dataclass(frozen=True, eq=False)
class Atlas:
    """Finite atlas of a compact manifold embedded in R^D.

    ``grid_map`` maps the parameter box ``grid_box`` onto the whole manifold
    and is used for verification sweeps.
    """

    name: str
    charts: tuple[Chart, ...]
    grid_map: Callable[[np.ndarray], np.ndarray]
    grid_box: tuple[tuple[float, float], ...]

    @property
    def grid_dim(self) -> int:
        return len(self.grid_box)

    @property
    def ambient_dim(self) -> int:
        return self.charts[0].ambient_dim

    @property
    def dim(self) -> int:
        return self.charts[0].dim

    def best_chart(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        margins = np.stack([c.margin(x) for c in self.charts], axis=1)
        return np.argmax(margins, axis=1)


def _stereographic(sign: float, name: str) -> Chart:
    # projection from the pole (0, 0, sign)
    w = "(1 + x1^2 + x2^2)"
    last = f"(x1^2 + x2^2 - 1) / {w}" if sign > 0 else f"(1 - x1^2 - x2^2) / {w}"
    embed = (parse(f"2*x1 / {w}", 2), parse(f"2*x2 / {w}", 2), parse(last, 2))

    def inverse(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        with np.errstate(divide="ignore", invalid="ignore"):
            den = 1.0 - sign * x[:, 2]
            return x[:, :2] / den[:, None]

    def margin(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return 1.0 - sign * x[:, 2]

    # |d embed| = 2 / (1 + |w|^2) <= 2
    return Chart(name, embed, inverse, margin, lipschitz=2.0)


def _sphere_grid(p):
    p = np.atleast_2d(np.asarray(p, dtype=float))
    th, ph = p[:, 0], p[:, 1]
    return np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=1)


def _angle_chart(offset: float, name: str) -> Chart:
    # theta in (offset - pi, offset + pi)
    embed = (parse("cos(x1)", 1), parse("sin(x1)", 1))

    def inverse(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        th = np.arctan2(x[:, 1], x[:, 0])
        th = offset + np.mod(th - offset + math.pi, 2 * math.pi) - math.pi
        return th[:, None]

    def margin(x):
        th = inverse(x)[:, 0]
        return math.pi - np.abs(th - offset)

    return Chart(name, embed, inverse, margin)


def _circle_grid(p):
    p = np.atleast_2d(np.asarray(p, dtype=float))
    return np.stack([np.cos(p[:, 0]), np.sin(p[:, 0])], axis=1)


def builtin_atlas(name: str) -> Atlas:
    """``"S2"``: two stereographic charts; ``"S1"``: two angle charts."""
    if name == "S2":
        charts = (_stereographic(+1.0, "north"), _stereographic(-1.0, "south"))
        return Atlas("S2", charts, _sphere_grid, ((0.0, math.pi), (0.0, 2 * math.pi)))
    if name == "S1":
        charts = (_angle_chart(0.0, "theta0"), _angle_chart(math.pi, "theta_pi"))
        return Atlas("S1", charts, _circle_grid, ((0.0, 2 * math.pi),))
    raise GeometryError(f"unknown atlas {name!r}")


def transition_jacobian(chart_a: Chart, chart_b: Chart, x) -> np.ndarray:
    """Differential of ``chart_a^{-1} o chart_b`` at the ambient point ``x``."""
    wa = chart_a.inverse(x)[0]
    wb = chart_b.inverse(x)[0]
    da = chart_a.differential(wa)
    db = chart_b.differential(wb)
    return np.linalg.lstsq(da, db, rcond=None)[0]


__all__ = [
    "AdaptedFrame", "Atlas", "Chart", "GeometryError", "RankDeficiencyError",
    "SeparationError", "ZeroComponent", "ZeroSetDescription", "ZeroSetError",
    "adapted_frame", "builtin_atlas", "identity_chart", "normalize_signs",
    "sample_component", "sample_parameters", "tangent_basis", "transition_jacobian",
]
