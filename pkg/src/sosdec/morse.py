"""Parametrised Morse lemma and the local sum-of-squares pieces it yields.

Around a zero ``x0`` with adapted frame ``P = (P1, P2)`` write
``g(x', y') = f(x0 + P1 x' + P2 y')``.  The valley ``x' = phi(y')`` solves
``grad_x' g = 0`` (Newton with continuation in ``y'``), and with

    B(x', y') = 2 int_0^1 (1 - t) d2_x'x' g(phi + t (x' - phi), y') dt
    R = L^{-T} (L^{-1} B L^{-T})^{1/2} L^T,     H' = L L^T
    z = R (x' - phi(y'))

one has ``g = g(phi(y'), y') + z^T H' z / 2``.  Writing ``H' = sum lam_i u_i u_i^T``
the pieces are ``f_i = sqrt(lam_i / 2) u_i^T z``; on the validated ball the
valley term vanishes and ``f = sum f_i^2``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.spatial import cKDTree

from .calculus import QuadratureRule, gauss_legendre, jet2
from .exprparse import ExprAst
from .geometry import AdaptedFrame, ZeroComponent, adapted_frame, normalize_signs
from .nhc import NhcReport, component_tangent, nhc_from_jet
from .tolerances import DEFAULT, Tolerances

log = logging.getLogger(__name__)


class MorseError(RuntimeError):
    pass


class NewtonError(MorseError):
    """Newton for the valley map did not converge (point outside the Morse chart)."""


class NotPositiveDefiniteError(MorseError):
    """``L^{-1} B L^{-T}`` left the positive-definite cone."""


class RadiusCollapseError(MorseError):
    def __init__(self, message: str, attempts: list[tuple[float, str]]):
        detail = "; ".join(f"r={r:g}: {why}" for r, why in attempts)
        super().__init__(f"{message} ({detail})")
        self.attempts = attempts


class NhcFailure(MorseError):
    def __init__(self, report: NhcReport):
        super().__init__(f"normal Hessian condition fails at {report.x0.tolist()}: {report.verdict}")
        self.report = report


# ---------------------------------------------------------------------------
# Building blocks


def _normal_derivatives(f: ExprAst, frame: AdaptedFrame, xp, yp):
    """Value, normal gradient and normal Hessian of ``g`` at a batch of points."""
    j = jet2(f, frame.from_frame(xp, yp))
    p1 = frame.P1
    grad = j.gradient @ p1
    hess = np.einsum("ai,nab,bj->nij", p1, j.hessian, p1)
    return j.value, grad, 0.5 * (hess + hess.transpose(0, 2, 1))


def _newton(f, frame, yp, x_init, tol: Tolerances, bound: float = np.inf):
    """Batched Newton on ``x' -> grad_x' g(x', y')``; returns (x, converged, |grad|)."""
    n = yp.shape[0]
    x = np.array(x_init, dtype=float, copy=True).reshape(n, frame.d1)
    converged = np.zeros(n, dtype=bool)
    failed = np.zeros(n, dtype=bool)
    gnorm = np.full(n, np.inf)
    active = np.arange(n)
    for _ in range(tol.newton_maxiter + 1):
        if active.size == 0:
            break
        _, g, h = _normal_derivatives(f, frame, x[active], yp[active])
        gn = np.linalg.norm(g, axis=1)
        gnorm[active] = gn
        done = gn <= tol.tol_newton
        if done.any():
            # the valley must be a non-degenerate minimum in x'
            mins = np.linalg.eigvalsh(h[done])[:, 0] if frame.d1 else np.ones(done.sum())
            idx = active[done]
            converged[idx[mins > 0]] = True
            failed[idx[~(mins > 0)]] = True
            # one polishing step: quadratic convergence takes |grad| to roundoff level
            for k, i in enumerate(idx):
                if mins[k] > 0:
                    x[i] += np.linalg.solve(h[done][k], -g[done][k])
        keep = ~done
        active, g, h = active[keep], g[keep], h[keep]
        if active.size == 0:
            break
        step = np.empty_like(g)
        for k in range(len(active)):
            try:
                step[k] = np.linalg.solve(h[k], -g[k])
            except np.linalg.LinAlgError:
                step[k] = np.nan
        x[active] += step
        bad = ~np.isfinite(x[active]).all(axis=1) | (np.linalg.norm(x[active], axis=1) > bound)
        failed[active[bad]] = True
        active = active[~bad]
    return x, converged & ~failed, gnorm


def solve_phi(
    f: ExprAst,
    frame: AdaptedFrame,
    yprime,
    start=None,
    tol: Tolerances = DEFAULT,
) -> np.ndarray:
    """Valley point ``phi(y')`` with ``grad_x' g(phi(y'), y') = 0`` by Newton.

    ``yprime`` may be one vector (length d0) or a batch ``(N, d0)``.
    """
    yp = np.asarray(yprime, dtype=float)
    single = yp.ndim == 1
    yp = yp.reshape(-1, frame.d0) if yp.size else np.zeros((1 if single else len(yp), 0))
    x_init = np.zeros((len(yp), frame.d1)) if start is None else np.asarray(start, dtype=float)
    x, ok, gnorm = _newton(f, frame, yp, x_init.reshape(len(yp), frame.d1), tol)
    if not ok.all():
        k = int(np.argmin(ok))
        raise NewtonError(
            f"Newton did not converge at y'={yp[k].tolist()} (|grad| = {gnorm[k]:.3e})"
        )
    return x[0] if single else x


def integral_B(
    f: ExprAst,
    frame: AdaptedFrame,
    xprime,
    yprime,
    phi_y,
    rule: QuadratureRule,
) -> np.ndarray:
    """``2 int_0^1 (1-t) P1^T H(A(x_t, y')) P1 dt`` with ``x_t = phi + t (x' - phi)``."""
    xp = np.atleast_2d(np.asarray(xprime, dtype=float))
    single = np.ndim(xprime) == 1
    n, d1 = xp.shape
    ph = np.asarray(phi_y, dtype=float).reshape(n, d1)
    yp = np.asarray(yprime, dtype=float).reshape(n, frame.d0)
    k = rule.size
    t = rule.nodes[:, None, None]
    xt = (ph[None] + t * (xp - ph)[None]).reshape(k * n, d1)
    _, _, h = _normal_derivatives(f, frame, xt, np.tile(yp, (k, 1)))
    w = (2.0 * rule.weights * (1.0 - rule.nodes))[:, None, None, None]
    b = (w * h.reshape(k, n, d1, d1)).sum(axis=0)
    b = 0.5 * (b + b.transpose(0, 2, 1))
    return b[0] if single else b


def _factor(b: np.ndarray, chol: np.ndarray, eps_pd: float):
    """Batched ``R = L^{-T} sqrt(L^{-1} B L^{-T}) L^T``; returns (R, ok, min eig)."""
    linv = solve_triangular(chol, np.eye(len(chol)), lower=True)
    m0 = linv @ b @ linv.T
    m0 = 0.5 * (m0 + np.swapaxes(m0, -1, -2))
    mu, v = np.linalg.eigh(m0)
    scale = 1.0 + np.abs(mu).max(axis=-1)
    ok = mu[..., 0] > eps_pd * scale
    root = (v * np.sqrt(np.clip(mu, 0.0, None))[..., None, :]) @ np.swapaxes(v, -1, -2)
    r = linv.T @ root @ chol.T
    return r, ok, mu[..., 0]


def factor_F(B, H, eps_pd: float = DEFAULT.eps_pd) -> np.ndarray:
    """Right inverse of ``R -> R^T H R`` near ``H``: returns ``R`` with ``R^T H R = B``.

    Works on one matrix or a stack ``(N, k, k)`` of ``B``.
    """
    B = np.asarray(B, dtype=float)
    H = np.asarray(H, dtype=float)
    try:
        chol = np.linalg.cholesky(0.5 * (H + H.T))
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError("H is not positive definite") from None
    r, ok, mu_min = _factor(B, chol, eps_pd)
    if not np.all(ok):
        raise NotPositiveDefiniteError(
            f"L^-1 B L^-T has eigenvalue {float(np.min(mu_min)):.3e} <= eps_pd"
        )
    return r


# ---------------------------------------------------------------------------
# Local decomposition


@dataclass
class MorseTerms:
    value: np.ndarray  # g(x', y')
    valley: np.ndarray  # g(phi(y'), y')
    quadratic: np.ndarray  # z^T H' z / 2
    z: np.ndarray
    pieces: np.ndarray
    xprime: np.ndarray
    yprime: np.ndarray
    phi: np.ndarray
    pd_ok: np.ndarray

    @property
    def residual(self) -> np.ndarray:
        return self.value - self.valley - self.quadratic


class LocalDecomposition:
    """Sum-of-squares pieces of ``f`` on a ball around one zero.

    The valley cache is filled during construction (continuation from
    ``y' = 0``); after :meth:`freeze` evaluation never mutates the object.
    """

    def __init__(
        self,
        f: ExprAst,
        frame: AdaptedFrame,
        hprime: np.ndarray,
        eigenvalues: np.ndarray,
        eigenvectors: np.ndarray,
        rule: QuadratureRule,
        tol: Tolerances = DEFAULT,
        radius: float = float("nan"),
        **meta,
    ):
        self.f = f
        self.frame = frame
        self.hprime = hprime
        self.eigenvalues = eigenvalues
        self.eigenvectors = eigenvectors
        self.rule = rule
        self.tol = tol
        self.radius = radius
        self.meta = meta
        self._chol = np.linalg.cholesky(hprime) if frame.d1 else np.zeros((0, 0))
        self._weights = np.sqrt(eigenvalues / 2.0)
        self._cache_y = np.zeros((0, frame.d0))
        self._cache_phi = np.zeros((0, frame.d1))
        self._tree = None
        self.frozen = False

    @property
    def x0(self) -> np.ndarray:
        return self.frame.x0

    @property
    def n_pieces(self) -> int:
        return self.frame.d1

    @property
    def dim(self) -> int:
        return self.frame.dim

    # -- valley map ---------------------------------------------------------

    def _nearest(self, yp: np.ndarray) -> np.ndarray:
        if len(self._cache_y) == 0:
            return np.zeros((len(yp), self.frame.d1))
        if self.frame.d0 == 0:
            return np.repeat(self._cache_phi[:1], len(yp), axis=0)
        tree = self._tree if self._tree is not None else cKDTree(self._cache_y)
        _, idx = tree.query(yp)
        return self._cache_phi[idx]

    def phi(self, yprime) -> np.ndarray:
        yp = np.atleast_2d(np.asarray(yprime, dtype=float))
        if self.frame.d0 == 0 and len(self._cache_phi):
            return np.repeat(self._cache_phi[:1], len(yp), axis=0)
        x, ok, gnorm = _newton(self.f, self.frame, yp, self._nearest(yp), self.tol)
        if not ok.all():
            k = int(np.argmin(ok))
            raise NewtonError(
                f"valley Newton failed at y'={yp[k].tolist()} (|grad| = {gnorm[k]:.3e})"
            )
        return x

    def populate_cache(self, radius: float, spacing: float | None = None) -> np.ndarray:
        """Solve the valley on a grid of ``|y'| <= radius`` by continuation.

        Returns the boolean mask of grid points where Newton converged; the
        cache keeps only the converged points.
        """
        if self.frozen:
            raise MorseError("cannot repopulate a frozen decomposition")
        d0, d1 = self.frame.d0, self.frame.d1
        if d0 == 0:
            yp = np.zeros((1, 0))
            x, ok, _ = _newton(self.f, self.frame, yp, np.zeros((1, d1)), self.tol)
            self._cache_y, self._cache_phi = yp[ok], x[ok]
            return ok
        spacing = radius / 8.0 if spacing is None else spacing
        half = int(np.ceil(1.05 * radius / spacing))
        axis = np.arange(-half, half + 1)
        mesh = np.stack([g.ravel() for g in np.meshgrid(*([axis] * d0), indexing="ij")], axis=1)
        mesh = mesh[np.linalg.norm(mesh * spacing, axis=1) <= 1.05 * radius + 1e-12]
        ring = np.abs(mesh).max(axis=1)
        ys = mesh * spacing
        phis = np.zeros((len(ys), d1))
        ok = np.zeros(len(ys), dtype=bool)
        bound = 10.0 * max(radius, 1.0)
        for k in range(int(ring.max()) + 1):
            cur = np.flatnonzero(ring == k)
            done = np.flatnonzero(ok)
            if k == 0:
                start = np.zeros((len(cur), d1))
            elif done.size == 0:
                break
            else:
                diff = ys[cur][:, None, :] - ys[done][None, :, :]
                start = phis[done[np.argmin((diff**2).sum(-1), axis=1)]]
            x, conv, _ = _newton(self.f, self.frame, ys[cur], start, self.tol, bound)
            phis[cur] = x
            ok[cur] = conv
        self._cache_y, self._cache_phi = ys[ok], phis[ok]
        self._tree = None
        return ok

    def freeze(self) -> "LocalDecomposition":
        if self.frame.d0 and len(self._cache_y):
            self._tree = cKDTree(self._cache_y)
        self._cache_y.setflags(write=False)
        self._cache_phi.setflags(write=False)
        self.frozen = True
        return self

    @property
    def cache(self) -> tuple[np.ndarray, np.ndarray]:
        return self._cache_y, self._cache_phi

    # -- evaluation ---------------------------------------------------------

    def morse_terms(self, u, strict: bool = True) -> MorseTerms:
        """All terms of the Morse identity at ambient (chart) points ``u``."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        xp, yp = self.frame.to_frame(u)
        n, d1 = xp.shape
        value = np.asarray(self.f(u), dtype=float)
        if d1 == 0:
            empty = np.zeros((n, 0))
            return MorseTerms(value, value, np.zeros(n), empty, empty, xp, yp, empty,
                              np.ones(n, dtype=bool))
        ph = self.phi(yp)
        valley = np.asarray(self.f(self.frame.from_frame(ph, yp)), dtype=float)
        b = integral_B(self.f, self.frame, xp, yp, ph, self.rule)
        r, ok, mu_min = _factor(b, self._chol, self.tol.eps_pd)
        if strict and not ok.all():
            k = int(np.argmin(ok))
            raise NotPositiveDefiniteError(
                f"B left the positive cone at {u[k].tolist()} (min eig {mu_min[k]:.3e})"
            )
        z = np.einsum("nij,nj->ni", r, xp - ph)
        pieces = (z @ self.eigenvectors) * self._weights
        quad = 0.5 * np.einsum("ni,ij,nj->n", z, self.hprime, z)
        return MorseTerms(value, valley, quad, z, pieces, xp, yp, ph, ok)

    def pieces(self, u) -> np.ndarray:
        """Piece values ``(N, d - d0)`` at points ``u`` inside the validity ball."""
        return self.morse_terms(u).pieces

    # -- serialisation ------------------------------------------------------

    def to_dict(self) -> dict:
        fr = self.frame
        out = {
            "x0": fr.x0.tolist(),
            "P1": fr.P1.tolist(),
            "P2": fr.P2.tolist(),
            "hprime": self.hprime.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "eigenvectors": self.eigenvectors.tolist(),
            "radius": float(self.radius),
            "quad_nodes": self.rule.size,
            "n_pieces": self.n_pieces,
        }
        for k, v in self.meta.items():
            out[k] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, f: ExprAst, data: dict, tol: Tolerances = DEFAULT) -> "LocalDecomposition":
        d = len(data["x0"])
        p1 = np.array(data["P1"], dtype=float).reshape(d, -1)
        p2 = np.array(data["P2"], dtype=float).reshape(d, -1)
        frame = AdaptedFrame(np.array(data["x0"], dtype=float), p1, p2)
        k = p1.shape[1]
        meta = {key: v for key, v in data.items() if key not in _RECORD_KEYS}
        ld = cls(
            f, frame,
            np.array(data["hprime"], dtype=float).reshape(k, k),
            np.array(data["eigenvalues"], dtype=float),
            np.array(data["eigenvectors"], dtype=float).reshape(k, k),
            gauss_legendre(int(data["quad_nodes"])),
            tol,
            float(data["radius"]),
            **meta,
        )
        ld.populate_cache(ld.radius)
        return ld.freeze()


_RECORD_KEYS = {"x0", "P1", "P2", "hprime", "eigenvalues", "eigenvectors", "radius",
                "quad_nodes", "n_pieces"}


# ---------------------------------------------------------------------------
# Construction and radius validation


def ball_probes(dim: int, radius: float, target: int = 2000) -> np.ndarray:
    """Regular grid of the box ``[-r, r]^dim`` restricted to the closed ball."""
    m = max(5, int(round(target ** (1.0 / dim)))) if dim else 1
    m += (m + 1) % 2  # odd, so the centre is a node
    axis = np.linspace(-radius, radius, m)
    mesh = np.stack([g.ravel() for g in np.meshgrid(*([axis] * dim), indexing="ij")], axis=1)
    return mesh[np.linalg.norm(mesh, axis=1) <= radius * (1 + 1e-12)]


def check_radius(ld: LocalDecomposition, radius: float) -> str | None:
    """Run every validity probe at ``radius``; return the failure reason or None."""
    tol = ld.tol
    fr = ld.frame
    ok = ld.populate_cache(radius)
    if not ok.all():
        return "valley Newton did not converge"
    ys, phis = ld.cache
    if fr.d1 and np.linalg.norm(phis, axis=1).max() > radius:
        return "valley leaves the ball"
    valley = np.abs(np.asarray(ld.f(fr.from_frame(phis, ys))))
    if valley.max() > tol.tol_zero:
        return f"f on the valley reaches {valley.max():.3e} > tol_zero"
    probes = ball_probes(fr.dim, radius)
    u = fr.x0 + probes @ fr.P.T
    try:
        terms = ld.morse_terms(u, strict=False)
    except NewtonError as exc:
        return str(exc)
    if not terms.pd_ok.all():
        return "L^-1 B L^-T not positive definite on probes"
    scale = 1.0 + np.abs(terms.value).max()
    worst = np.abs(terms.residual).max() if len(terms.value) else 0.0
    if worst > tol.tol_recon * scale:
        return f"Morse identity residual {worst:.3e} > {tol.tol_recon * scale:.3e}"
    return None


def validate_radius(ld: LocalDecomposition, f: ExprAst | None = None,
                    r_max: float | None = None) -> float:
    """Largest radius in ``r0, r0/2, ...`` passing every probe; sets ``ld.radius``."""
    tol = ld.tol
    r = tol.r0 if r_max is None else min(tol.r0, r_max)
    attempts = []
    while r >= tol.r_min * (1 - 1e-12):
        why = check_radius(ld, r)
        if why is None:
            ld.radius = r
            return r
        attempts.append((r, why))
        log.debug("radius %g rejected at %s: %s", r, ld.x0.tolist(), why)
        r /= 2.0
    raise RadiusCollapseError(f"validity radius collapsed below r_min at {ld.x0.tolist()}",
                              attempts)


def local_decomposition_at(
    f: ExprAst,
    x0,
    tangent: np.ndarray,
    tol: Tolerances = DEFAULT,
    r_max: float | None = None,
    **meta,
) -> LocalDecomposition:
    """Local pieces around the zero ``x0`` whose zero manifold has tangent ``tangent``."""
    x0 = np.asarray(x0, dtype=float)
    frame = adapted_frame(None, x0, tangent)
    jet = jet2(f, x0)
    report = nhc_from_jet(jet, frame, tol)
    if not report.passed:
        raise NhcFailure(report)
    frame = frame.aligned(jet.hessian)
    hp = frame.P1.T @ jet.hessian @ frame.P1
    hp = 0.5 * (hp + hp.T)
    lam, vecs = np.linalg.eigh(hp)
    order = np.argsort(-lam, kind="stable")
    lam, vecs = lam[order], normalize_signs(vecs[:, order])
    ld = LocalDecomposition(f, frame, hp, lam, vecs, gauss_legendre(tol.quad_nodes), tol, **meta)
    validate_radius(ld, f, r_max)
    return ld.freeze()


def local_pieces(
    f: ExprAst,
    comp: ZeroComponent,
    t0=None,
    tol: Tolerances = DEFAULT,
    r_max: float | None = None,
    **meta,
) -> LocalDecomposition:
    """Local decomposition at the component point ``comp(t0)``."""
    t0 = np.zeros(0) if t0 is None else np.asarray(t0, dtype=float)
    x0 = comp.image(t0[None, :] if comp.kind == "chart" else None)[0]
    tangent = component_tangent(comp, t0, tol)
    meta.setdefault("parameter", [float(v) for v in t0])
    return local_decomposition_at(f, x0, tangent, tol, r_max, **meta)


def graph_distance(ld: LocalDecomposition, comp: ZeroComponent, n_dense: int = 512) -> float:
    """Largest distance from the computed valley graph to the declared chart."""
    ys, phis = ld.cache
    pts = ld.frame.from_frame(phis, ys)
    if comp.kind == "point":
        return float(np.linalg.norm(pts - comp.location, axis=1).max())
    from .geometry import sample_parameters
    from .calculus import jacobian

    ts = sample_parameters(comp, n_dense)
    imgs = comp.image(ts)
    worst = 0.0
    for p in pts:
        t = ts[np.argmin(((imgs - p) ** 2).sum(1))].copy()
        for _ in range(20):  # Gauss-Newton projection onto the chart
            res = comp.image(t[None])[0] - p
            jac = jacobian(comp.coords, t)
            dt = np.linalg.lstsq(jac, -res, rcond=None)[0]
            t += dt
            if np.linalg.norm(dt) < 1e-14:
                break
        worst = max(worst, float(np.linalg.norm(comp.image(t[None])[0] - p)))
    return worst
