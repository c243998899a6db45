"""Bumps, square-root partitions of unity and assembly of the global decomposition.

Assembly runs in two stages.

Within a zero component ``i`` the local decompositions ``f = sum_k f_jk^2`` on
balls ``U_j`` are glued with bumps ``b_j`` normalised by
``sigma_i = sum_j b_j^2``: on ``{sigma_i > 0}`` the family ``(b_j / sqrt(sigma_i)) f_jk``
squares to ``f``.

Across components, the weights ``psi_i = step(sigma_i)`` of the component
neighbourhoods and the star weight ``psi_* = step(f / theta - 1)`` (supported
where ``f >= theta > 0``) are normalised by ``Phi = psi_*^2 + sum_i psi_i^2``.
Because the neighbourhoods of distinct components are disjoint, pieces of
different components can share an output slot, so the number of global
pieces is ``max_i n_i + 1``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .exprparse import ExprAst
from .geometry import (
    Atlas,
    Chart,
    GeometryError,
    SeparationError,
    ZeroComponent,
    ZeroSetDescription,
    identity_chart,
    sample_parameters,
)
from .manifold import chart_tangent, pullback
from .morse import LocalDecomposition, local_decomposition_at
from .nhc import component_tangent
from .tolerances import DEFAULT, Tolerances

log = logging.getLogger(__name__)

DELTA_COVER = 0.1  # minimum of the largest raw weight at every covered sample
SIGMA_LOW = 1e-4  # component weight vanishes below this bump mass
SIGMA_HIGH = 0.25  # component weight is 1 above this bump mass
PLATEAU_FRACTION = 0.6
SUPPORT_FRACTION = 0.9
MAX_PATCHES = 4096


class GluingError(RuntimeError):
    pass


class CoverageGapError(GluingError):
    """Some sample point is not covered by any member of a partition."""

    def __init__(self, message: str, points: np.ndarray):
        pts = np.atleast_2d(points)
        shown = ", ".join(str([round(float(v), 6) for v in p]) for p in pts[:3])
        super().__init__(f"{message}; uncovered points include {shown}")
        self.points = pts


class CoverGapError(GluingError):
    """The local validity balls do not cover a zero component."""


class ContainmentError(GluingError):
    """A bump support leaks out of the domain of the function it multiplies."""


class OverlapError(GluingError):
    """Neighbourhoods of two different components intersect."""


class ResidualBreachError(GluingError):
    """The glued family does not reproduce ``f`` to tolerance."""


# ---------------------------------------------------------------------------
# Bumps


def bump_profile(s) -> np.ndarray:
    """Smooth non-increasing profile: 1 for ``s <= 0``, 0 for ``s >= 1``.

    ``v(s) = E(1-s) / (E(1-s) + E(s))`` with the flat function ``E(u) = exp(-1/u)``;
    it satisfies ``v(s) + v(1-s) = 1`` and all derivatives vanish at 0 and 1.
    """
    s = np.asarray(s, dtype=float)
    out = np.where(s <= 0.0, 1.0, 0.0)
    mid = (s > 0.0) & (s < 1.0)
    sm = s[mid]
    with np.errstate(over="ignore", divide="ignore"):  # subnormal s gives +-inf, expit maps to 1/0
        out[mid] = expit(1.0 / sm - 1.0 / (1.0 - sm))
    return out


def smooth_step(tau) -> np.ndarray:
    """Smooth non-decreasing step: 0 for ``tau <= 0``, 1 for ``tau >= 1``."""
    return bump_profile(1.0 - np.asarray(tau, dtype=float))


@dataclass(frozen=True, eq=False)
class Bump:
    """Radial bump ``x -> v((|w(x) - c| - r_p) / (r_s - r_p))``.

    ``w`` is the identity, or the inverse of ``chart`` on a manifold (a
    chart-composed bump).  Points the chart cannot see get value 0.
    """

    center: np.ndarray
    r_plateau: float
    r_support: float
    chart: Chart | None = None

    def __post_init__(self):
        if not 0.0 < self.r_plateau < self.r_support:
            raise ValueError("need 0 < r_plateau < r_support")

    def local_coords(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return x if self.chart is None else self.chart.inverse(x)

    def radial(self, x) -> np.ndarray:
        w = self.local_coords(x)
        with np.errstate(invalid="ignore"):
            rho = np.linalg.norm(w - self.center, axis=1)
        return np.where(np.isfinite(rho), rho, np.inf)

    def __call__(self, x) -> np.ndarray:
        rho = self.radial(x)
        return bump_profile((rho - self.r_plateau) / (self.r_support - self.r_plateau))

    def to_dict(self) -> dict:
        return {
            "center": [float(v) for v in self.center],
            "r_plateau": float(self.r_plateau),
            "r_support": float(self.r_support),
            "chart": "identity" if self.chart is None else self.chart.name,
        }


def bump_eval(b: Bump, x):
    """Bump value at one point (float) or a batch of points (array)."""
    single = np.ndim(x) == 1
    v = b(x)
    return float(v[0]) if single else v


# ---------------------------------------------------------------------------
# Square-root partitions of unity


Weight = Callable[[np.ndarray], np.ndarray]


def normalize_rows(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rows of ``raw / sqrt(sum raw^2)`` and the mask of rows with a positive sum.

    Each row is divided by its largest entry first, so tiny weights (whose
    squares would underflow) still normalise to unit length.
    """
    raw = np.asarray(raw, dtype=float)
    top = raw.max(axis=1) if raw.shape[1] else np.zeros(len(raw))
    live = top > 0.0
    scaled = raw / np.where(live, top, 1.0)[:, None]
    norm = np.sqrt((scaled**2).sum(axis=1))
    return np.where(live[:, None], scaled / np.where(live, norm, 1.0)[:, None], 0.0), live


@dataclass(frozen=True, eq=False)
class PartitionSq:
    """Family ``chi_i = w_i / sqrt(sum_j w_j^2)`` built from raw weights ``w_i``."""

    members: tuple[Weight, ...]
    delta_cover: float = DELTA_COVER

    def raw(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if not self.members:
            return np.zeros((len(x), 0))
        return np.stack([np.asarray(m(x), dtype=float) for m in self.members], axis=1)

    def normalizer(self, x) -> np.ndarray:
        return (self.raw(x) ** 2).sum(axis=1)

    def values(self, x) -> np.ndarray:
        chi, live = normalize_rows(self.raw(x))
        if not live.all():
            x = np.atleast_2d(x)
            raise CoverageGapError("partition evaluated outside its cover", x[~live])
        return chi

    def sum_of_squares(self, x) -> np.ndarray:
        return (self.values(x) ** 2).sum(axis=1)

    def check_coverage(self, x) -> None:
        raw = self.raw(x)
        best = raw.max(axis=1) if raw.shape[1] else np.zeros(len(raw))
        bad = best < self.delta_cover
        if bad.any():
            raise CoverageGapError(
                f"largest weight below delta_cover={self.delta_cover}", np.atleast_2d(x)[bad]
            )


def sqrt_partition(members: Sequence[Weight], samples=None,
                   delta_cover: float = DELTA_COVER) -> PartitionSq:
    """Square-root normalised partition; checks coverage on ``samples`` if given."""
    part = PartitionSq(tuple(members), delta_cover)
    if samples is not None:
        part.check_coverage(samples)
    return part


def extend_by_zero(g: Callable[[np.ndarray], np.ndarray], chi: Bump, center, radius: float):
    """``x -> chi(x) g(x)`` inside the ball ``B(center, radius)`` and 0 elsewhere.

    ``g`` is only called at points of ``supp(chi)``, which must lie in the ball.
    """
    center = np.asarray(center, dtype=float)
    if np.linalg.norm(chi.center - center) + chi.r_support > radius * (1 + 1e-12):
        raise ContainmentError(
            f"bump support (radius {chi.r_support:g}) not inside the ball of radius {radius:g}"
        )

    def extended(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        c = chi(x)
        out = np.zeros(len(x))
        live = c > 0.0
        if live.any():
            out[live] = c[live] * np.asarray(g(x[live]), dtype=float).reshape(-1)
        return out

    return extended


def disjoint_neighborhoods(zs: ZeroSetDescription, r0: float = 1.0, n: int = 256) -> np.ndarray:
    """Per-component radii ``r_sep(i)`` = half the distance to the nearest other component."""
    dist = zs.separations(n)
    m = len(zs.components)
    radii = np.full(m, float(r0))
    for i in range(m):
        others = np.delete(dist[i], i)
        if others.size:
            if others.min() <= 1e-12:
                j = int(np.argmin(np.where(np.arange(m) == i, np.inf, dist[i])))
                raise SeparationError(f"components {i} and {j} touch or overlap")
            radii[i] = min(r0, 0.5 * others.min())
    return radii


# ---------------------------------------------------------------------------
# Domain: a box in R^d or a manifold given by an atlas


@dataclass(frozen=True, eq=False)
class Domain:
    """The set ``Omega`` on which the decomposition must hold."""

    charts: tuple[Chart, ...]
    ambient_dim: int
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    atlas: Atlas | None = None

    @classmethod
    def box(cls, lo, hi) -> "Domain":
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if lo.shape != hi.shape or not np.all(lo < hi):
            raise GeometryError("domain box needs lo < hi in every coordinate")
        return cls((identity_chart(len(lo)),), len(lo), lo, hi)

    @classmethod
    def manifold(cls, atlas: Atlas) -> "Domain":
        return cls(atlas.charts, atlas.ambient_dim, atlas=atlas)

    @property
    def is_manifold(self) -> bool:
        return self.atlas is not None

    def best_chart(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.atlas is None:
            return np.zeros(len(x), dtype=int)
        return self.atlas.best_chart(x)

    def contains(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.atlas is None:
            slack = 1e-12 * (1.0 + np.abs(self.hi - self.lo))
            return np.all((x >= self.lo - slack) & (x <= self.hi + slack), axis=1)
        return np.ones(len(x), dtype=bool)

    def samples(self, n: int = 20000) -> np.ndarray:
        """Regular grid over the box (or the atlas parameter box, mapped onto M)."""
        if self.atlas is None:
            lo, hi = self.lo, self.hi
        else:
            box = np.asarray(self.atlas.grid_box, dtype=float)
            lo, hi = box[:, 0], box[:, 1]
        k = len(lo)
        m = max(2, int(np.ceil(n ** (1.0 / k))))
        axes = [np.linspace(lo[i], hi[i], m) for i in range(k)]
        pts = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
        return pts if self.atlas is None else self.atlas.grid_map(pts)

    def to_dict(self) -> dict:
        if self.atlas is None:
            return {"kind": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}
        return {"kind": "manifold", "atlas": self.atlas.name}


# ---------------------------------------------------------------------------
# Component level


@dataclass(frozen=True, eq=False)
class Patch:
    """One local decomposition together with its bump and chart."""

    local: LocalDecomposition
    bump: Bump
    chart_index: int

    @property
    def n_pieces(self) -> int:
        return self.local.n_pieces

    def to_dict(self) -> dict:
        return {"local": self.local.to_dict(), "bump": self.bump.to_dict(),
                "chart_index": self.chart_index}


def make_patch(ld: LocalDecomposition, chart_index: int, chart: Chart | None) -> Patch:
    bump = Bump(ld.x0.copy(), PLATEAU_FRACTION * ld.radius, SUPPORT_FRACTION * ld.radius,
                None if chart is None or chart.name == "identity" else chart)
    return Patch(ld, bump, chart_index)


@dataclass(frozen=True, eq=False)
class ComponentFamily:
    """Glued pieces of one component: ``(b_j / sqrt(sigma)) f_jk`` for all patches j."""

    index: int
    component: ZeroComponent
    patches: tuple[Patch, ...]
    n_normal: int
    r_sep: float = 1.0

    @property
    def n_pieces(self) -> int:
        return len(self.patches) * self.n_normal

    @property
    def partition(self) -> PartitionSq:
        return PartitionSq(tuple(p.bump for p in self.patches))

    def bumps(self, x) -> np.ndarray:
        return self.partition.raw(x)

    def sigma(self, x) -> np.ndarray:
        return (self.bumps(x) ** 2).sum(axis=1)

    def weight(self, x) -> np.ndarray:
        """Component weight ``psi = step((sigma - SIGMA_LOW) / (SIGMA_HIGH - SIGMA_LOW))``."""
        return smooth_step((self.sigma(x) - SIGMA_LOW) / (SIGMA_HIGH - SIGMA_LOW))

    def pieces(self, x, bumps: np.ndarray | None = None) -> np.ndarray:
        """Component-level pieces; valid where ``sigma > 0`` (zero elsewhere)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        raw = self.bumps(x) if bumps is None else bumps
        chi, _ = normalize_rows(raw)
        out = np.zeros((len(x), self.n_pieces))
        for j, patch in enumerate(self.patches):
            live = raw[:, j] > 0.0
            if not live.any():
                continue
            w = patch.bump.local_coords(x[live])
            vals = patch.local.pieces(w)
            out[live, j * self.n_normal:(j + 1) * self.n_normal] = chi[live, j, None] * vals
        return out

    def to_dict(self) -> dict:
        return {
            "component": self.index,
            "r_sep": float(self.r_sep),
            "n_normal": self.n_normal,
            "n_pieces": self.n_pieces,
            "patches": [p.to_dict() for p in self.patches],
        }


def _shell_points(patch: Patch, chart: Chart | None, rng: np.random.Generator,
                  n_dirs: int = 64, fractions=(0.5, 0.65, 0.8, 0.95)) -> np.ndarray:
    """Ambient points at radii ``fractions * r_support`` around the patch centre."""
    m = len(patch.bump.center)
    dirs = rng.standard_normal((n_dirs, m))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    rads = np.asarray(fractions) * patch.bump.r_support
    w = (patch.bump.center + rads[:, None, None] * dirs[None]).reshape(-1, m)
    return w if chart is None or chart.name == "identity" else chart.to_ambient(w)


def _local_for(f_charts, domain: Domain, comp: ZeroComponent, t, tol: Tolerances,
               r_cap: float, index: int) -> tuple[LocalDecomposition, int]:
    x = comp.image(t[None, :] if comp.kind == "chart" else None)[0]
    k = int(domain.best_chart(x)[0])
    chart = domain.charts[k]
    w = chart.inverse(x)[0]
    tangent = chart_tangent(chart, w, component_tangent(comp, t, tol))
    r_max = r_cap / chart.lipschitz
    meta = {"component": index, "parameter": [float(v) for v in t], "chart": chart.name}
    return local_decomposition_at(f_charts[k], w, tangent, tol, r_max, **meta), k


def glue_component(
    f: ExprAst,
    comp: ZeroComponent,
    domain: Domain,
    tol: Tolerances = DEFAULT,
    *,
    index: int = 0,
    r_sep: float | None = None,
    initial_patches: int = 8,
    f_charts: Sequence[ExprAst] | None = None,
) -> ComponentFamily:
    """Cover one component by validated local decompositions and glue them.

    Patch centres sit on a parameter grid whose size doubles until every dense
    sample of the component has bump mass ``sigma >= SIGMA_HIGH``.
    """
    r_cap = tol.r0 if r_sep is None else min(tol.r0, r_sep)
    if f_charts is None:
        f_charts = [pullback(f, c) for c in domain.charts]
    d_chart = domain.charts[0].dim
    n_normal = d_chart - comp.d0
    cache: dict[tuple, tuple[LocalDecomposition, int]] = {}
    n = 1 if comp.kind == "point" else initial_patches
    dense_t = sample_parameters(comp, 256)
    while True:
        ts = sample_parameters(comp, n)
        patches = []
        for t in ts:
            key = tuple(np.round(t, 12))
            if key not in cache:
                cache[key] = _local_for(f_charts, domain, comp, t, tol, r_cap, index)
            ld, k = cache[key]
            patches.append(make_patch(ld, k, domain.charts[k]))
        family = ComponentFamily(index, comp, tuple(patches), n_normal, r_cap)
        try:
            check_cover(family, max(256, 8 * len(ts)))
            break
        except CoverGapError as exc:
            if n * 2 > MAX_PATCHES:
                raise CoverGapError(f"{exc} (gave up at {len(ts)} patches)") from None
            log.info("%s; refining", exc)
            n *= 2
    _check_component_residual(f, family, domain, tol)
    return family


def check_cover(family: ComponentFamily, n_dense: int = 256) -> None:
    """Every dense sample of the component must carry bump mass ``>= SIGMA_HIGH``."""
    comp = family.component
    ts = sample_parameters(comp, n_dense)
    sig = family.sigma(comp.image(ts))
    if not (sig >= SIGMA_HIGH).all():
        k = int(np.argmin(sig))
        where = f"t={ts[k].tolist()}" if comp.kind == "chart" else "the point"
        raise CoverGapError(
            f"component {family.index}: bump mass {sig[k]:.3g} < {SIGMA_HIGH} at {where} "
            f"with {len(family.patches)} patches"
        )


def _check_component_residual(f: ExprAst, family: ComponentFamily, domain: Domain,
                              tol: Tolerances) -> None:
    rng = np.random.default_rng(tol.seed)
    pts = np.concatenate([
        _shell_points(p, domain.charts[p.chart_index], rng, n_dirs=16,
                      fractions=(0.0, 0.25, 0.5, 0.75, 0.95))
        for p in family.patches
    ])
    raw = family.bumps(pts)
    keep = (raw**2).sum(axis=1) > SIGMA_LOW
    pts, raw = pts[keep], raw[keep]
    fv = np.asarray(f(pts), dtype=float)
    recon = (family.pieces(pts, raw) ** 2).sum(axis=1)
    err = np.abs(fv - recon)
    limit = tol.tol_global * (1.0 + np.abs(fv).max(initial=0.0))
    if err.size and err.max() > limit:
        k = int(np.argmax(err))
        raise ResidualBreachError(
            f"component {family.index}: glued residual {err[k]:.3e} > {limit:.3e} at {pts[k].tolist()}"
        )


# ---------------------------------------------------------------------------
# Global level


@dataclass(frozen=True, eq=False)
class GlobalDecomposition:
    """``f = sum_m g_m^2`` on ``Omega``; the last piece is the star piece."""

    f: ExprAst
    domain: Domain
    families: tuple[ComponentFamily, ...]
    theta_star: float
    tol: Tolerances = DEFAULT
    removed: frozenset = field(default_factory=frozenset)
    components: tuple[ZeroComponent, ...] = ()

    @property
    def n_local_slots(self) -> int:
        return max((fam.n_pieces for fam in self.families), default=0)

    @property
    def n_pieces(self) -> int:
        return self.n_local_slots + 1

    @property
    def star_index(self) -> int:
        return self.n_local_slots

    @property
    def per_component_counts(self) -> list[int]:
        return [fam.n_pieces for fam in self.families]

    @property
    def n_patches(self) -> int:
        return sum(len(fam.patches) for fam in self.families)

    # -- weights ------------------------------------------------------------

    def star_weight(self, x, fvals=None) -> np.ndarray:
        fv = np.asarray(self.f(np.atleast_2d(x)) if fvals is None else fvals, dtype=float)
        return smooth_step(fv / self.theta_star - 1.0)

    def weights(self, x) -> dict:
        """Raw weights ``psi_i``, ``psi_*`` and their normaliser ``Phi``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        fv = np.asarray(self.f(x), dtype=float)
        bumps = [fam.bumps(x) for fam in self.families]
        sig = [(b**2).sum(axis=1) for b in bumps]
        psi = np.stack(
            [smooth_step((s - SIGMA_LOW) / (SIGMA_HIGH - SIGMA_LOW)) for s in sig], axis=1
        ) if self.families else np.zeros((len(x), 0))
        star = self.star_weight(x, fv)
        phi = star**2 + (psi**2).sum(axis=1)
        return {"f": fv, "bumps": bumps, "sigma": sig, "psi": psi, "star": star, "phi": phi}

    @property
    def partition(self) -> PartitionSq:
        """Global partition: component weights first, star weight last."""
        members: list[Weight] = list(_ComponentWeight(fam) for fam in self.families)
        members.append(_StarWeight(self))
        return PartitionSq(tuple(members))

    def partition_values(self, x) -> np.ndarray:
        """Normalised global weights ``(chi_1, ..., chi_n, chi_*)`` at ``x``."""
        w = self.weights(x)
        chi, live = normalize_rows(np.concatenate([w["psi"], w["star"][:, None]], axis=1))
        if not live.all():
            raise CoverageGapError("points outside the cover", np.atleast_2d(x)[~live])
        return chi

    # -- pieces -------------------------------------------------------------

    def pieces(self, x) -> np.ndarray:
        """Piece values ``(N, n_pieces)``.

        Points outside every neighbourhood where ``f`` is exactly 0 get all-zero
        pieces (the identity holds trivially there); any other uncovered point
        is an error.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        w = self.weights(x)
        chi, covered = normalize_rows(np.concatenate([w["psi"], w["star"][:, None]], axis=1))
        gap = ~covered & (w["f"] != 0.0)
        if gap.any():
            raise CoverageGapError("decomposition evaluated outside its cover", x[gap])
        out = np.zeros((len(x), self.n_pieces))
        for i, fam in enumerate(self.families):
            live = w["psi"][:, i] > 0.0
            if not live.any():
                continue
            vals = fam.pieces(x[live], w["bumps"][i][live])
            out[live, :fam.n_pieces] += chi[live, i, None] * vals
        star = w["star"] > 0.0
        out[star, self.star_index] = chi[star, -1] * np.sqrt(w["f"][star])
        if self.removed:
            out[:, sorted(self.removed)] = 0.0
        return out

    def evaluate(self, x) -> np.ndarray:
        return (self.pieces(x) ** 2).sum(axis=1)

    def active_counts(self, x) -> np.ndarray:
        return (self.pieces(x) != 0.0).sum(axis=1)

    def with_pieces_removed(self, indices) -> "GlobalDecomposition":
        """Copy with the given global pieces replaced by 0 (fault injection)."""
        idx = frozenset(int(i) for i in indices)
        if any(not 0 <= i < self.n_pieces for i in idx):
            raise IndexError("piece index out of range")
        return GlobalDecomposition(self.f, self.domain, self.families, self.theta_star,
                                   self.tol, self.removed | idx, self.components)

    # -- metadata -----------------------------------------------------------

    def supports(self) -> list[dict]:
        """Per global piece: the patch balls (or the star region) it lives on."""
        out = []
        for m in range(self.n_local_slots):
            regions = []
            for fam in self.families:
                if m < fam.n_pieces:
                    j = m // fam.n_normal
                    p = fam.patches[j]
                    regions.append({"component": fam.index, "patch": j,
                                    "normal_index": m % fam.n_normal, **p.bump.to_dict()})
            out.append({"index": m, "kind": "local", "regions": regions})
        out.append({"index": self.star_index, "kind": "star",
                    "regions": [{"f_at_least": float(self.theta_star)}]})
        return out

    def to_manifest(self, max_active: int | None = None) -> dict:
        counts = {
            "pieces": self.n_pieces,
            "per_component": self.per_component_counts,
            "patches": self.n_patches,
        }
        if max_active is not None:
            counts["max_active"] = int(max_active)
        return {
            "function": str(self.f),
            "dim": self.f.dim,
            "domain": self.domain.to_dict(),
            "tolerances": self.tol.as_dict(),
            "seed": self.tol.seed,
            "components": [c.to_dict() for c in self.components],
            "families": [fam.to_dict() for fam in self.families],
            "theta_star": float(self.theta_star),
            "partition": {
                "delta_cover": DELTA_COVER,
                "sigma_low": SIGMA_LOW,
                "sigma_high": SIGMA_HIGH,
                "plateau_fraction": PLATEAU_FRACTION,
                "support_fraction": SUPPORT_FRACTION,
            },
            "pieces": self.supports(),
            "counts": counts,
        }


@dataclass(frozen=True, eq=False)
class _ComponentWeight:
    family: ComponentFamily

    def __call__(self, x) -> np.ndarray:
        return self.family.weight(x)


@dataclass(frozen=True, eq=False)
class _StarWeight:
    gd: GlobalDecomposition

    def __call__(self, x) -> np.ndarray:
        return self.gd.star_weight(x)


def check_disjoint(families: Sequence[ComponentFamily], domain: Domain, seed: int = 42) -> None:
    """Sampled check that bump supports of different components never meet."""
    if len(families) < 2:
        return
    rng = np.random.default_rng(seed)
    for fam in families:
        pts = np.concatenate([
            _shell_points(p, domain.charts[p.chart_index], rng, n_dirs=32,
                          fractions=(0.0, 0.5, 0.8, 0.99))
            for p in fam.patches
        ])
        for other in families:
            if other is fam:
                continue
            hit = (other.bumps(pts) > 0.0).any(axis=1) & (fam.bumps(pts) > 0.0).any(axis=1)
            if hit.any():
                raise OverlapError(
                    f"neighbourhoods of components {fam.index} and {other.index} meet near "
                    f"{pts[np.argmax(hit)].tolist()}"
                )


def choose_theta(f: ExprAst, families: Sequence[ComponentFamily], domain: Domain,
                 samples: np.ndarray) -> float:
    """Half the smallest value of ``f`` where no component weight exceeds 1/2."""
    fv = np.asarray(f(samples), dtype=float)
    psi = np.stack([fam.weight(samples) for fam in families], axis=1) if families else \
        np.zeros((len(samples), 1))
    outside = (psi.max(axis=1) <= 0.5) & domain.contains(samples)
    if not outside.any():
        return 0.5 * float(np.max(fv))
    k = np.flatnonzero(outside)[np.argmin(fv[outside])]
    if fv[k] <= 0.0:
        raise CoverageGapError("f vanishes outside every component neighbourhood "
                               "(undeclared zero or too small cover)", samples[k])
    return 0.5 * float(fv[k])


def glue_global(
    f: ExprAst,
    zs: ZeroSetDescription,
    families: Sequence[ComponentFamily],
    domain: Domain,
    tol: Tolerances = DEFAULT,
    n_samples: int = 20000,
) -> GlobalDecomposition:
    """Combine component families and the star piece into one decomposition."""
    families = tuple(families)
    check_disjoint(families, domain, tol.seed)
    rng = np.random.default_rng(tol.seed)
    shells = [
        _shell_points(p, domain.charts[p.chart_index], rng)
        for fam in families for p in fam.patches
    ]
    samples = np.concatenate([domain.samples(n_samples)] + shells)
    samples = samples[domain.contains(samples)]
    theta = choose_theta(f, families, domain, samples)
    gd = GlobalDecomposition(f, domain, families, theta, tol, frozenset(), tuple(zs.components))
    gd.partition.check_coverage(samples)
    return gd


def build_decomposition(
    f: ExprAst,
    zs: ZeroSetDescription,
    domain: Domain,
    tol: Tolerances = DEFAULT,
) -> GlobalDecomposition:
    """End-to-end construction: separations, component covers, global gluing."""
    if domain.is_manifold:
        xs = np.concatenate([c.image(sample_parameters(c, 32)) for c in zs.components])
        worst = np.abs(np.asarray(f(xs))).max()
        if worst > tol.tol_zero:
            raise GeometryError(f"declared zero set has |f| up to {worst:.3e}")
    else:
        zs.validate(f, 32, tol.tol_zero, tol.tol_grad)
    radii = disjoint_neighborhoods(zs, tol.r0)
    f_charts = [pullback(f, c) for c in domain.charts]
    families = [
        glue_component(f, comp, domain, tol, index=i, r_sep=float(radii[i]), f_charts=f_charts)
        for i, comp in enumerate(zs.components)
    ]
    return glue_global(f, zs, families, domain, tol)


def from_manifest(f: ExprAst, zs: ZeroSetDescription, domain: Domain, manifest: dict,
                  tol: Tolerances = DEFAULT) -> GlobalDecomposition:
    """Rebuild a decomposition from its manifest (no re-validation of radii)."""
    f_charts = [pullback(f, c) for c in domain.charts]
    families = []
    for rec in manifest["families"]:
        i = int(rec["component"])
        patches = []
        for prec in rec["patches"]:
            k = int(prec["chart_index"])
            ld = LocalDecomposition.from_dict(f_charts[k], prec["local"], tol)
            b = prec["bump"]
            chart = domain.charts[k]
            bump = Bump(np.array(b["center"], dtype=float), float(b["r_plateau"]),
                        float(b["r_support"]), None if chart.name == "identity" else chart)
            patches.append(Patch(ld, bump, k))
        families.append(ComponentFamily(i, zs.components[i], tuple(patches),
                                        int(rec["n_normal"]), float(rec["r_sep"])))
    return GlobalDecomposition(f, domain, tuple(families), float(manifest["theta_star"]),
                               tol, frozenset(), tuple(zs.components))
