"""Numerical normal/strict Hessian condition checks at sampled zeros."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .calculus import Jet2, jet2
from .exprparse import ExprAst
from .geometry import (
    AdaptedFrame,
    ZeroComponent,
    ZeroSetDescription,
    adapted_frame,
    sample_parameters,
    tangent_basis,
)
from .tolerances import DEFAULT, Tolerances

PASS = "pass"
FAIL_RANK = "fail_rank"
FAIL_NORMAL_PD = "fail_normal_pd"
FAIL_NOT_CRITICAL = "fail_not_critical"
FAIL_NOT_ZERO = "fail_not_zero"


@dataclass(frozen=True, eq=False)
class NhcReport:
    x0: np.ndarray
    eigenvalues: np.ndarray  # of the full Hessian, descending
    rank_estimate: int
    d0_expected: int
    normal_min_eig: float
    verdict: str
    value: float = 0.0
    grad_norm: float = 0.0
    eps_pd: float = 0.0
    rank_condition: bool = False
    normal_condition: bool = False
    tangent_in_kernel: bool = True
    gap_ambiguous: bool = False
    psd_screen: bool = True
    component: int = 0
    parameter: tuple = ()
    chart: str = ""

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    @property
    def conditions_agree(self) -> bool:
        """Rank condition and normal positivity must coincide (they are equivalent)."""
        return self.rank_condition == (self.normal_condition and self.tangent_in_kernel)

    @property
    def dim(self) -> int:
        return len(self.x0)


def nhc_from_jet(jet: Jet2, frame: AdaptedFrame, tol: Tolerances = DEFAULT, **meta) -> NhcReport:
    """Decide the condition from the second-order jet at ``frame.x0``."""
    h = np.asarray(jet.hessian, dtype=float)
    d = h.shape[0]
    d0 = frame.d0
    eig = np.sort(np.linalg.eigvalsh(h))[::-1]
    hnorm = float(np.abs(eig).max()) if d else 0.0
    eps = tol.eps_pd * (1.0 + hnorm)

    rank = int((eig > eps).sum())
    gap_ambiguous = False
    if 0 < rank < d and eig[rank - 1] - eig[rank] <= tol.gap_factor * eps:
        gap_ambiguous = True

    if frame.d1:
        hr = frame.P1.T @ h @ frame.P1
        normal_min = float(np.linalg.eigvalsh(0.5 * (hr + hr.T)).min())
    else:
        normal_min = float("inf")
    if d0:
        hv = np.linalg.norm(h @ frame.P2, axis=0)
        tangent_in_kernel = bool(np.all(hv <= tol.eps_rank * (1.0 + hnorm)))
    else:
        tangent_in_kernel = True

    value = float(jet.value)
    grad_norm = float(np.linalg.norm(jet.gradient))
    rank_ok = rank == d - d0 and not gap_ambiguous
    normal_ok = normal_min > eps

    if abs(value) > tol.tol_zero:
        verdict = FAIL_NOT_ZERO
    elif grad_norm > tol.tol_grad:
        verdict = FAIL_NOT_CRITICAL
    elif not rank_ok:
        verdict = FAIL_RANK
    elif not normal_ok:
        verdict = FAIL_NORMAL_PD
    else:
        verdict = PASS
    return NhcReport(
        x0=np.asarray(frame.x0, dtype=float),
        eigenvalues=eig,
        rank_estimate=rank,
        d0_expected=d0,
        normal_min_eig=normal_min,
        verdict=verdict,
        value=value,
        grad_norm=grad_norm,
        eps_pd=eps,
        rank_condition=rank_ok,
        normal_condition=normal_ok,
        tangent_in_kernel=tangent_in_kernel,
        gap_ambiguous=gap_ambiguous,
        psd_screen=bool(eig.size == 0 or eig[-1] >= -eps),
        **meta,
    )


def component_tangent(comp: ZeroComponent, t, tol: Tolerances = DEFAULT) -> np.ndarray:
    """Tangent basis honouring the declared dimension (empty when declared 0)."""
    if comp.d0 == 0:
        return np.zeros((comp.ambient_dim, 0))
    return tangent_basis(comp, t, tol.eps_rank)


def check_nhc_at(
    f: ExprAst,
    comp: ZeroComponent,
    t,
    frame: AdaptedFrame | None = None,
    tol: Tolerances = DEFAULT,
    **meta,
) -> NhcReport:
    """Check both forms of the normal Hessian condition at ``comp(t)``."""
    t = np.zeros(0) if t is None else np.asarray(t, dtype=float)
    if frame is None:
        x0 = comp.image(t[None, :] if comp.kind == "chart" else None)[0]
        frame = adapted_frame(comp, x0, component_tangent(comp, t, tol))
    meta.setdefault("parameter", tuple(float(v) for v in t))
    return nhc_from_jet(jet2(f, frame.x0), frame, tol, **meta)


@dataclass(frozen=True, eq=False)
class GlobalNhcReport:
    reports: list[NhcReport] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.reports) and all(r.passed for r in self.reports)

    @property
    def shc(self) -> bool:
        """Strict Hessian condition: every component is an isolated, passing zero."""
        return self.passed and all(r.d0_expected == 0 for r in self.reports)

    @property
    def failures(self) -> list[NhcReport]:
        return [r for r in self.reports if not r.passed]


def check_global_nhc(
    f: ExprAst,
    zs: ZeroSetDescription,
    samples_per_component: int = 32,
    tol: Tolerances = DEFAULT,
) -> GlobalNhcReport:
    reports = []
    for i, comp in enumerate(zs.components):
        for t in sample_parameters(comp, samples_per_component):
            reports.append(check_nhc_at(f, comp, t, tol=tol, component=i))
    return GlobalNhcReport(reports)


# ---------------------------------------------------------------------------
# Serialisation


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def report_rows(reports: list[NhcReport]) -> list[list[str]]:
    d = max((r.dim for r in reports), default=0)
    header = ["component", "parameter", "x0"]
    header += [f"eig{k + 1}" for k in range(d)]
    header += ["rank", "d0", "normal_min_eig", "verdict"]
    rows = [header]
    for r in reports:
        eig = list(r.eigenvalues) + [float("nan")] * (d - len(r.eigenvalues))
        rows.append(
            [str(r.component), " ".join(_fmt(v) for v in r.parameter),
             " ".join(_fmt(v) for v in r.x0)]
            + [_fmt(v) for v in eig]
            + [str(r.rank_estimate), str(r.d0_expected), _fmt(r.normal_min_eig), r.verdict]
        )
    return rows


def report_csv(reports: list[NhcReport]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(report_rows(reports))
    return buf.getvalue()


def report_table(reports: list[NhcReport]) -> str:
    lines = []
    for r in reports:
        eig = ", ".join(f"{v:.6g}" for v in r.eigenvalues)
        note = " (gap ambiguous)" if r.gap_ambiguous else ""
        where = f" chart={r.chart}" if r.chart else ""
        lines.append(
            f"comp {r.component}{where} x0=({', '.join(f'{v:.6g}' for v in r.x0)}) "
            f"eig=[{eig}] rank={r.rank_estimate} d0={r.d0_expected} "
            f"normal_min={r.normal_min_eig:.6g} {r.verdict}{note}"
        )
    return "\n".join(lines)
