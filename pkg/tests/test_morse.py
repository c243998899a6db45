from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import trapezoid

from conftest import fixture_config
from sosdec.calculus import gauss_legendre, jet2
from sosdec.exprparse import parse
from sosdec.geometry import ZeroComponent, adapted_frame
from sosdec.morse import (
    LocalDecomposition,
    NhcFailure,
    NotPositiveDefiniteError,
    RadiusCollapseError,
    factor_F,
    graph_distance,
    integral_B,
    local_decomposition_at,
    local_pieces,
    solve_phi,
)
from sosdec.nhc import FAIL_RANK
from sosdec.tolerances import DEFAULT

F1_SRC = "(x1^2 + x2^2 - 4)^2"
PARABOLA_SRC = "(x1 - x2^2)^2"


def _ball(ld, n, rng, fraction=1.0):
    d = ld.dim
    v = rng.normal(size=(n, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = ld.radius * fraction * rng.uniform(0, 1, size=(n, 1)) ** (1 / d)
    return ld.x0 + r * v


@pytest.fixture(scope="module")
def f1_local():
    return local_decomposition_at(parse(F1_SRC, 2), [2.0, 0.0], np.array([[0.0], [1.0]]))


def test_valley_of_parabola_closed_form():
    f = parse(PARABOLA_SRC, 2)
    frame = adapted_frame(None, np.zeros(2), np.array([[0.0], [1.0]]))
    ys = np.linspace(-0.8, 0.8, 9)[:, None]
    phis = np.vstack([solve_phi(f, frame, y) for y in ys])
    pts = frame.from_frame(phis, ys)
    np.testing.assert_allclose(pts[:, 0], pts[:, 1] ** 2, atol=1e-14)


def test_integral_B_is_exact_for_quadratic_normal_dependence():
    f = parse(PARABOLA_SRC, 2)
    frame = adapted_frame(None, np.zeros(2), np.array([[0.0], [1.0]]))
    rule = gauss_legendre(8)
    xp = np.array([[0.3], [-0.7]])
    yp = np.array([[0.2], [0.5]])
    phis = solve_phi(f, frame, yp)
    b = integral_B(f, frame, xp, yp, phis, rule)
    np.testing.assert_allclose(b[:, 0, 0], 2.0, rtol=1e-14)


def test_integral_B_oracle_with_finite_quadrature(rng):
    # nonquadratic in the normal direction: compare with a fine trapezoid rule
    f = parse("exp(x1) - 1 - x1 + x2^2 * x1^2", 2)
    frame = adapted_frame(None, np.zeros(2), np.zeros((2, 0)))
    u = np.array([0.4, -0.3])
    xp, yp = frame.to_frame(u[None])
    b = integral_B(f, frame, xp[0], yp[0], np.zeros(2), gauss_legendre(8))
    t = np.linspace(0, 1, 20001)
    h = jet2(f, frame.from_frame(t[:, None] * xp, np.repeat(yp, len(t), 0))).hessian
    h = np.einsum("ai,nab,bj->nij", frame.P1, h, frame.P1)
    ref = trapezoid(2 * (1 - t)[:, None, None] * h, t, axis=0)
    np.testing.assert_allclose(b, ref, rtol=1e-7)


def test_factor_F_right_inverse(rng):
    for _ in range(20):
        k = int(rng.integers(1, 5))
        a = rng.normal(size=(k, k))
        h = a @ a.T + k * np.eye(k)
        e = rng.normal(size=(k, k)) * 0.1
        b = h + e @ e.T
        r = factor_F(b, h)
        np.testing.assert_allclose(r.T @ h @ r, b, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(factor_F(h, h), np.eye(k), atol=1e-12)
    stack = np.stack([h, 2 * h])
    rs = factor_F(stack, h)
    np.testing.assert_allclose(rs[1], np.sqrt(2) * np.eye(k), atol=1e-12)


def test_factor_F_rejects_non_positive():
    with pytest.raises(NotPositiveDefiniteError):
        factor_F(np.eye(2), np.diag([1.0, -1.0]))
    with pytest.raises(NotPositiveDefiniteError):
        factor_F(np.diag([1.0, -1e-3]), np.eye(2))


def test_quadratic_gives_linear_pieces(rng):
    f = parse("x1^2 + x1*x2 + 2*x2^2", 2)
    ld = local_decomposition_at(f, [0.0, 0.0], np.zeros((2, 0)))
    assert ld.radius == DEFAULT.r0 and ld.n_pieces == 2
    u = rng.normal(size=(30, 2)) * 0.3
    p = ld.pieces(u)
    np.testing.assert_allclose((p**2).sum(1), f(u), rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(ld.pieces(2.5 * u), 2.5 * p, rtol=1e-12, atol=1e-15)


def test_f1_single_piece_is_the_defining_equation(f1_local, rng):
    assert f1_local.n_pieces == 1
    u = _ball(f1_local, 200, rng)
    p = f1_local.pieces(u)[:, 0]
    np.testing.assert_allclose(np.abs(p), np.abs((u**2).sum(1) - 4), rtol=1e-10, atol=1e-13)


def test_f1_graph_matches_circle(f1_local):
    circle = ZeroComponent.chart(["2*cos(t1)", "2*sin(t1)"], [[0, 2 * np.pi]])
    assert graph_distance(f1_local, circle) < 1e-10


def test_stationarity_and_vanishing_z(f1_local):
    ys, phis = f1_local.cache
    pts = f1_local.frame.from_frame(phis, ys)
    grads = jet2(f1_local.f, pts).gradient
    assert np.abs(grads @ f1_local.frame.P1).max() < 1e-10
    terms = f1_local.morse_terms(pts)
    assert np.abs(terms.z).max() < 1e-12
    assert np.abs(terms.valley).max() < DEFAULT.tol_zero


def test_frame_covariance(rng):
    f = parse(F1_SRC, 2)
    a = local_decomposition_at(f, [0.0, 2.0], np.array([[1.0], [0.0]]))
    b = local_decomposition_at(f, [0.0, 2.0], np.array([[-3.0], [0.0]]))
    u = _ball(a, 100, rng, 0.9)
    sa, sb = (a.pieces(u) ** 2).sum(1), (b.pieces(u) ** 2).sum(1)
    np.testing.assert_allclose(sa, sb, rtol=1e-10, atol=1e-14)
    np.testing.assert_allclose(np.abs(a.pieces(u)), np.abs(b.pieces(u)), rtol=1e-9, atol=1e-13)


def test_round_trip_is_bitwise(f1_local, rng):
    again = LocalDecomposition.from_dict(f1_local.f, f1_local.to_dict())
    u = _ball(f1_local, 50, rng)
    np.testing.assert_array_equal(again.pieces(u), f1_local.pieces(u))
    assert again.radius == f1_local.radius


def test_nhc_failure_is_raised():
    with pytest.raises(NhcFailure) as exc:
        local_decomposition_at(parse("x1^4", 1), [0.0], np.zeros((1, 0)))
    assert exc.value.report.verdict == FAIL_RANK


def test_radius_collapse_reports_attempts():
    tol = DEFAULT.with_overrides(tol_recon=1e-30)
    with pytest.raises(RadiusCollapseError) as exc:
        local_decomposition_at(parse(F1_SRC, 2), [2.0, 0.0], np.array([[0.0], [1.0]]), tol)
    radii = [r for r, _ in exc.value.attempts]
    assert radii[0] == 1.0 and radii[-1] >= DEFAULT.r_min
    assert all("residual" in why for _, why in exc.value.attempts)


def test_f4_radius_is_not_tiny():
    cfg = fixture_config("f4")
    comp = cfg.zero_set_description().components[0]
    for t in ([0.0], [1.0], [np.pi / 2]):
        ld = local_pieces(cfg.function_ast(), comp, t, cfg.tol())
        assert ld.radius >= 0.25


def test_scaled_function_radius():
    comp = ZeroComponent.chart(["2*cos(t1)", "2*sin(t1)"], [[0, 2 * np.pi]])
    plain = local_pieces(parse(F1_SRC, 2), comp, [0.3])
    scaled = local_pieces(parse(f"0.000001*{F1_SRC}", 2), comp, [0.3])
    assert DEFAULT.r_min <= scaled.radius <= plain.radius


@settings(max_examples=8, deadline=None)
@given(st.floats(0, 2 * np.pi), st.integers(0, 2**16))
def test_local_identity_on_the_validity_ball(t, seed):
    cfg = fixture_config("f3")
    comp = cfg.zero_set_description().components[0]
    ld = local_pieces(cfg.function_ast(), comp, [t - np.pi], cfg.tol())
    u = _ball(ld, 100, np.random.default_rng(seed))
    terms = ld.morse_terms(u)
    scale = 1 + np.abs(terms.value).max()
    assert np.abs(terms.residual).max() <= ld.tol.tol_recon * scale
    assert (terms.pieces**2).sum(1) == pytest.approx(terms.value, abs=ld.tol.tol_recon * scale)


def test_one_dimensional_square_gives_plus_minus_x():
    ld = local_decomposition_at(parse("x1^2", 1), [0.0], np.zeros((1, 0)))
    x = np.linspace(-1, 1, 21)[:, None]
    np.testing.assert_allclose(np.abs(ld.pieces(x)[:, 0]), np.abs(x[:, 0]), atol=1e-15)
