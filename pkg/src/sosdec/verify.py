"""Independent checks of a finished decomposition: residuals, smoothness, counts."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .exprparse import ExprAst
from .geometry import ZeroSetDescription, sample_parameters
from .gluing import GlobalDecomposition
from .tolerances import DEFAULT, Tolerances

C_FD = 10.0
DEFAULT_SCALES = (1e-2, 1e-3, 1e-4)


class GridSpecError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Grids


@dataclass(frozen=True)
class GridAxis:
    name: str
    lo: float
    hi: float
    n: int


@dataclass(frozen=True, eq=False)
class GridSpec:
    """Tensor grid; ``mapping`` (optional) sends grid points to ambient points."""

    axes: tuple[GridAxis, ...]
    mapping: Callable[[np.ndarray], np.ndarray] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.n for a in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def parameters(self) -> np.ndarray:
        lines = [np.linspace(a.lo, a.hi, a.n) for a in self.axes]
        mesh = np.meshgrid(*lines, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    def points(self) -> np.ndarray:
        p = self.parameters()
        return p if self.mapping is None else self.mapping(p)

    def with_mapping(self, mapping) -> "GridSpec":
        return GridSpec(self.axes, mapping)

    def __str__(self) -> str:
        return ",".join(f"{a.name}:{a.lo!r}:{a.hi!r}:{a.n}" for a in self.axes)


def parse_grid(text: str) -> GridSpec:
    """Parse ``"x1:lo:hi:n,x2:lo:hi:n"``."""
    axes = []
    for part in text.split(","):
        fields = part.strip().split(":")
        if len(fields) != 4:
            raise GridSpecError(f"grid axis {part!r} is not of the form name:lo:hi:n")
        name, lo, hi, n = fields
        try:
            lo_f, hi_f, n_i = float(lo), float(hi), int(n)
        except ValueError:
            raise GridSpecError(f"grid axis {part!r} has a non-numeric bound or count") from None
        if not lo_f < hi_f or n_i < 2:
            raise GridSpecError(f"grid axis {part!r} needs lo < hi and n >= 2")
        axes.append(GridAxis(name.strip(), lo_f, hi_f, n_i))
    return GridSpec(tuple(axes))


# ---------------------------------------------------------------------------
# Residuals


@dataclass(frozen=True, eq=False)
class ResidualReport:
    grid: str
    max_abs_residual: float
    mean_abs_residual: float
    worst_point: np.ndarray
    piece_count: int
    locally_finite_max_active: int
    max_abs_f: float
    tolerance: float

    @property
    def limit(self) -> float:
        return self.tolerance * (1.0 + self.max_abs_f)

    @property
    def passed(self) -> bool:
        return self.max_abs_residual <= self.limit

    def to_text(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        worst = ", ".join(f"{v:.6g}" for v in self.worst_point)
        return (
            f"residual {status}: max |f - sum g^2| = {self.max_abs_residual:.3e} "
            f"(limit {self.limit:.3e}), mean {self.mean_abs_residual:.3e}, worst at ({worst}); "
            f"pieces {self.piece_count}, max active {self.locally_finite_max_active}"
        )


def residuals(f: ExprAst, gd: GlobalDecomposition, grid: GridSpec,
              tol: Tolerances = DEFAULT) -> ResidualReport:
    """Exact enumeration of ``|f - sum g_m^2|`` over ``grid``."""
    pts = grid.points()
    fv = np.asarray(f(pts), dtype=float)
    pieces = gd.pieces(pts)
    err = np.abs(fv - (pieces**2).sum(axis=1))
    k = int(np.argmax(err)) if err.size else 0
    return ResidualReport(
        grid=str(grid),
        max_abs_residual=float(err.max(initial=0.0)),
        mean_abs_residual=float(err.mean()) if err.size else 0.0,
        worst_point=pts[k] if err.size else np.zeros(0),
        piece_count=gd.n_pieces,
        locally_finite_max_active=int((pieces != 0.0).sum(axis=1).max(initial=0)),
        max_abs_f=float(np.abs(fv).max(initial=0.0)),
        tolerance=tol.tol_global,
    )


# ---------------------------------------------------------------------------
# Smoothness


@dataclass(frozen=True, eq=False)
class SmoothnessProbe:
    """Finite-difference quotients of one piece near the zero set.

    ``quotients[k][s]`` is the largest ``|k-th central difference quotient|``
    over all probes at scale ``scales[s]``.
    """

    piece: int
    n_points: int
    scales: tuple[float, ...]
    quotients: dict[int, list[float]]
    max_order: int
    seed: int
    floor: float
    flagged: bool = False
    flagged_orders: tuple[int, ...] = field(default_factory=tuple)

    def to_text(self) -> str:
        parts = []
        for k, qs in sorted(self.quotients.items()):
            parts.append(f"D{k}: " + " ".join(f"{q:.3g}" for q in qs))
        verdict = ("quotients grow as h shrinks (order "
                   + ",".join(map(str, self.flagged_orders)) + ")") if self.flagged \
            else f"consistent with C^{self.max_order}"
        return f"piece {self.piece}: {verdict}; " + "; ".join(parts)


def difference_quotients(fn: Callable[[np.ndarray], np.ndarray], points: np.ndarray,
                         directions: np.ndarray, scales: Sequence[float]):
    """Central first and second difference quotients of ``fn`` (values ``(N, m)``).

    Returns ``(values at points, {1: [...], 2: [...]})`` with one ``(N, m)``
    array per scale.
    """
    n = len(points)
    batch = [points]
    for h in scales:
        batch += [points + h * directions, points - h * directions]
    vals = np.asarray(fn(np.concatenate(batch)), dtype=float).reshape(len(batch) * n, -1)
    p0 = vals[:n]
    q1, q2 = [], []
    for s, h in enumerate(scales):
        plus = vals[(1 + 2 * s) * n:(2 + 2 * s) * n]
        minus = vals[(2 + 2 * s) * n:(3 + 2 * s) * n]
        q1.append((plus - minus) / (2 * h))
        q2.append((plus - 2 * p0 + minus) / h**2)
    return p0, {1: q1, 2: q2}


def probe_quotients(fn, points, directions, scales=DEFAULT_SCALES, max_order: int = 2,
                    c_fd: float = C_FD, seed: int = 42) -> list[SmoothnessProbe]:
    """Flag each output column whose quotients at the finest scale exceed ``c_fd``
    times those at the coarsest scale (plus a floor relative to the values)."""
    scales = tuple(float(h) for h in scales)
    p0, quots = difference_quotients(fn, points, directions, scales)
    floor = 1e-3 * (1.0 + np.abs(p0).max(axis=0))
    probes = []
    for m in range(p0.shape[1]):
        table = {}
        bad = []
        for k in range(1, max_order + 1):
            maxima = [float(np.abs(q[:, m]).max(initial=0.0)) for q in quots[k]]
            table[k] = maxima
            if maxima[-1] > c_fd * (maxima[0] + floor[m]):
                bad.append(k)
        probes.append(SmoothnessProbe(m, len(points), scales, table, max_order, seed,
                                      float(floor[m]), bool(bad), tuple(bad)))
    return probes


def probe_points(gd: GlobalDecomposition, zs: ZeroSetDescription, n_per_component: int = 16,
                 n_random: int = 4, seed: int = 42):
    """Chart-coordinate probe points on and within ``r/2`` of the zero set.

    Returns a list of ``(chart, points)`` pairs, points in chart coordinates.
    """
    rng = np.random.default_rng(seed)
    by_chart: dict[int, list[np.ndarray]] = {}
    for fam, comp in zip(gd.families, zs.components):
        r = min(p.local.radius for p in fam.patches)
        xs = comp.image(sample_parameters(comp, n_per_component))
        ks = gd.domain.best_chart(xs)
        for x, k in zip(xs, ks):
            w = gd.domain.charts[k].inverse(x[None])[0]
            offs = rng.standard_normal((n_random, len(w)))
            offs *= (0.5 * r * rng.random(n_random) / np.linalg.norm(offs, axis=1))[:, None]
            by_chart.setdefault(int(k), []).append(np.vstack([w, w + offs]))
    return [(gd.domain.charts[k], np.concatenate(v)) for k, v in sorted(by_chart.items())]


def smoothness_probe(gd: GlobalDecomposition, zs: ZeroSetDescription,
                     scales: Sequence[float] = DEFAULT_SCALES, seed: int = 42,
                     max_order: int = 2) -> list[SmoothnessProbe]:
    """Probe every piece near the zero set for bounded difference quotients."""
    rng = np.random.default_rng(seed)
    combined: list[SmoothnessProbe] | None = None
    for chart, pts in probe_points(gd, zs, seed=seed):
        dirs = rng.standard_normal(pts.shape)
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

        def fn(w, chart=chart):
            x = w if chart.name == "identity" else chart.to_ambient(w)
            return gd.pieces(x)

        probes = probe_quotients(fn, pts, dirs, scales, max_order, seed=seed)
        combined = probes if combined is None else [_merge(a, b) for a, b in zip(combined, probes)]
    return combined or []


def _merge(a: SmoothnessProbe, b: SmoothnessProbe) -> SmoothnessProbe:
    table = {k: [max(x, y) for x, y in zip(a.quotients[k], b.quotients[k])] for k in a.quotients}
    orders = tuple(sorted(set(a.flagged_orders) | set(b.flagged_orders)))
    return SmoothnessProbe(a.piece, a.n_points + b.n_points, a.scales, table, a.max_order,
                           a.seed, max(a.floor, b.floor), a.flagged or b.flagged, orders)


# ---------------------------------------------------------------------------
# Counts


@dataclass(frozen=True)
class CountVerdict:
    piece_count: int
    dim: int
    shc: bool
    finite: bool = True

    @property
    def bound(self) -> int | None:
        return self.dim + 1 if self.shc else None

    @property
    def passed(self) -> bool:
        return self.finite and (not self.shc or self.piece_count <= self.dim + 1)

    def to_text(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        if self.shc:
            return f"count {status}: {self.piece_count} pieces, isolated zeros allow <= {self.dim + 1}"
        return f"count {status}: {self.piece_count} pieces (finite)"


def count_check(gd: GlobalDecomposition | int, zs: ZeroSetDescription | None,
                shc: bool, d: int) -> CountVerdict:
    n = gd if isinstance(gd, int) else gd.n_pieces
    return CountVerdict(int(n), int(d), bool(shc), True)


# ---------------------------------------------------------------------------
# Reports


@dataclass(frozen=True, eq=False)
class VerificationReport:
    residual: ResidualReport
    smoothness: list[SmoothnessProbe]
    count: CountVerdict

    @property
    def smooth_ok(self) -> bool:
        return not any(p.flagged for p in self.smoothness)

    @property
    def passed(self) -> bool:
        return self.residual.passed and self.smooth_ok and self.count.passed

    def to_text(self) -> str:
        lines = [self.residual.to_text(), self.count.to_text()]
        lines += ["smoothness " + p.to_text() for p in self.smoothness]
        lines.append("verification " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["check", "item", "value", "limit", "status"])
        r = self.residual
        w.writerow(["residual", "max_abs", _fmt(r.max_abs_residual), _fmt(r.limit),
                    _status(r.passed)])
        w.writerow(["residual", "mean_abs", _fmt(r.mean_abs_residual), "", ""])
        w.writerow(["residual", "max_active", str(r.locally_finite_max_active), "", ""])
        c = self.count
        w.writerow(["count", "pieces", str(c.piece_count),
                    "" if c.bound is None else str(c.bound), _status(c.passed)])
        for p in self.smoothness:
            for k, qs in sorted(p.quotients.items()):
                w.writerow(["smoothness", f"piece{p.piece}_D{k}", " ".join(_fmt(q) for q in qs),
                            "", _status(k not in p.flagged_orders)])
        return buf.getvalue()


def verify_decomposition(f: ExprAst, gd: GlobalDecomposition, zs: ZeroSetDescription,
                         grid: GridSpec, tol: Tolerances = DEFAULT) -> VerificationReport:
    res = residuals(f, gd, grid, tol)
    probes = smoothness_probe(gd, zs, seed=tol.seed)
    cnt = count_check(gd, zs, zs.is_discrete, gd.domain.charts[0].dim)
    return VerificationReport(res, probes, cnt)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _status(ok: bool) -> str:
    return "pass" if ok else "fail"
