"""Functions on embedded manifolds handled chart by chart.

A function on a manifold ``M`` in R^D is given by an ambient expression; in a
chart ``w -> embed(w)`` it becomes the pull-back ``f o embed``, an ordinary
function on an open subset of R^m to which the Euclidean machinery applies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calculus import jet2
from .exprparse import ExprAst, substitute
from .geometry import (
    Atlas,
    Chart,
    ZeroComponent,
    ZeroSetDescription,
    adapted_frame,
    sample_parameters,
    transition_jacobian,
)
from .morse import LocalDecomposition, local_decomposition_at
from .nhc import GlobalNhcReport, NhcReport, component_tangent, nhc_from_jet
from .tolerances import DEFAULT, Tolerances


def pullback(f: ExprAst, chart: Chart) -> ExprAst:
    """``f o embed`` as an expression in the chart coordinates."""
    if chart.name == "identity":
        return f
    if f.dim != chart.ambient_dim:
        raise ValueError(f"function has {f.dim} variables but the chart embeds into R^{chart.ambient_dim}")
    return substitute(f, chart.embed)


def chart_tangent(chart: Chart, w, tangent: np.ndarray) -> np.ndarray:
    """Express ambient tangent vectors in chart coordinates (``D embed(w) v = tangent``)."""
    tangent = np.asarray(tangent, dtype=float)
    if chart.name == "identity":
        return tangent
    if tangent.shape[1] == 0:
        return np.zeros((chart.dim, 0))
    return np.linalg.lstsq(chart.differential(w), tangent, rcond=None)[0]


@dataclass(frozen=True, eq=False)
class ChartPoint:
    """A point of ``M`` seen through its best chart."""

    chart_index: int
    chart: Chart
    w: np.ndarray
    x: np.ndarray


def locate(atlas: Atlas, x) -> ChartPoint:
    x = np.asarray(x, dtype=float)
    k = int(atlas.best_chart(x)[0])
    chart = atlas.charts[k]
    return ChartPoint(k, chart, chart.inverse(x)[0], x)


def nhc_on_manifold(
    f: ExprAst,
    atlas: Atlas,
    comp: ZeroComponent,
    t,
    tol: Tolerances = DEFAULT,
    **meta,
) -> NhcReport:
    """Normal Hessian condition of the pull-back in the best chart at ``comp(t)``."""
    t = np.zeros(0) if t is None else np.asarray(t, dtype=float)
    x = comp.image(t[None, :] if comp.kind == "chart" else None)[0]
    cp = locate(atlas, x)
    tangent = chart_tangent(cp.chart, cp.w, component_tangent(comp, t, tol))
    frame = adapted_frame(None, cp.w, tangent)
    meta.setdefault("parameter", tuple(float(v) for v in t))
    return nhc_from_jet(jet2(pullback(f, cp.chart), cp.w), frame, tol, chart=cp.chart.name, **meta)


def check_manifold_nhc(
    f: ExprAst,
    atlas: Atlas,
    zs: ZeroSetDescription,
    samples_per_component: int = 32,
    tol: Tolerances = DEFAULT,
) -> GlobalNhcReport:
    reports = []
    for i, comp in enumerate(zs.components):
        for t in sample_parameters(comp, samples_per_component):
            reports.append(nhc_on_manifold(f, atlas, comp, t, tol, component=i))
    return GlobalNhcReport(reports)


@dataclass(frozen=True, eq=False)
class HessianAgreement:
    x: np.ndarray
    chart_a: str
    chart_b: str
    hess_a: np.ndarray
    hess_b: np.ndarray
    transition: np.ndarray
    error: float  # |H_b - J^T H_a J| / (1 + |H_b|)


def hessian_agreement(f: ExprAst, chart_a: Chart, chart_b: Chart, x) -> HessianAgreement:
    """Compare the two pull-back Hessians at a critical point ``x`` in the overlap.

    At a critical point the Hessian transforms as a bilinear form,
    ``H_b = J^T H_a J`` with ``J`` the differential of the transition map.
    """
    x = np.asarray(x, dtype=float)
    wa = chart_a.inverse(x)[0]
    wb = chart_b.inverse(x)[0]
    ha = jet2(pullback(f, chart_a), wa).hessian
    hb = jet2(pullback(f, chart_b), wb).hessian
    jac = transition_jacobian(chart_a, chart_b, x)
    err = np.linalg.norm(hb - jac.T @ ha @ jac, 2) / (1.0 + np.linalg.norm(hb, 2))
    return HessianAgreement(x, chart_a.name, chart_b.name, ha, hb, jac, float(err))


def local_on_chart(
    f: ExprAst,
    chart: Chart,
    comp: ZeroComponent,
    t,
    tol: Tolerances = DEFAULT,
    r_max: float | None = None,
    **meta,
) -> LocalDecomposition:
    """Local decomposition of the pull-back of ``f`` around ``comp(t)`` in ``chart``."""
    t = np.zeros(0) if t is None else np.asarray(t, dtype=float)
    x = comp.image(t[None, :] if comp.kind == "chart" else None)[0]
    w = chart.inverse(x)[0]
    tangent = chart_tangent(chart, w, component_tangent(comp, t, tol))
    meta.setdefault("parameter", [float(v) for v in t])
    meta.setdefault("chart", chart.name)
    return local_decomposition_at(pullback(f, chart), w, tangent, tol, r_max, **meta)


__all__ = [
    "ChartPoint", "HessianAgreement", "check_manifold_nhc", "chart_tangent",
    "hessian_agreement", "local_on_chart", "locate", "nhc_on_manifold", "pullback",
]
