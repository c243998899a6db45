from __future__ import annotations

import numpy as np
import pytest

from conftest import fixture_config, fixture_decomposition
from sosdec.exprparse import parse
from sosdec.geometry import ZeroComponent, ZeroSetDescription, builtin_atlas, identity_chart
from sosdec.manifold import (
    chart_tangent,
    check_manifold_nhc,
    hessian_agreement,
    local_on_chart,
    locate,
    pullback,
)
from sosdec.nhc import FAIL_RANK

S2 = builtin_atlas("S2")
F5 = parse("x2^2", 3)


def test_pullback_matches_composition(rng):
    for chart in S2.charts:
        g = pullback(F5, chart)
        w = rng.uniform(-1.5, 1.5, size=(20, 2))
        np.testing.assert_allclose(g(w), F5(chart.to_ambient(w)), rtol=1e-14, atol=1e-16)
    ident = identity_chart(3)
    assert pullback(F5, ident) is F5
    with pytest.raises(ValueError):
        pullback(parse("x1", 2), S2.charts[0])


def test_chart_tangent_pushes_forward(rng):
    chart = S2.charts[0]
    w = np.array([0.3, -0.2])
    dmap = chart.differential(w)
    v = dmap @ rng.normal(size=(2, 1))
    np.testing.assert_allclose(dmap @ chart_tangent(chart, w, v), v, atol=1e-14)
    assert chart_tangent(chart, w, np.zeros((3, 0))).shape == (2, 0)


def test_locate_picks_a_well_inside_chart():
    north = locate(S2, [0.0, 0.0, -1.0])
    south = locate(S2, [0.0, 0.0, 1.0])
    assert north.chart_index != south.chart_index
    np.testing.assert_allclose(north.w, 0.0, atol=1e-15)


def test_f5_nhc_on_the_great_circle():
    cfg = fixture_config("f5")
    rep = check_manifold_nhc(cfg.function_ast(), S2, cfg.zero_set_description(), 24)
    assert rep.passed and not rep.shc
    assert {r.chart for r in rep.reports} == {c.name for c in S2.charts}
    for r in rep.reports:
        assert r.rank_estimate == 1 and r.d0_expected == 1


def test_isolated_declaration_fails_on_the_sphere():
    cfg = fixture_config("f5")
    comp = cfg.zero_set_description().components[0]
    pt = ZeroComponent.point(comp.image(np.array([[0.4]]))[0])
    rep = check_manifold_nhc(F5, S2, ZeroSetDescription((pt,), 3))
    assert rep.reports[0].verdict == FAIL_RANK


@pytest.mark.parametrize("t", [np.pi / 2, 1.2, 2.0])
def test_hessians_agree_across_charts(t):
    x = np.array([np.sin(t), 0.0, np.cos(t)])
    north, south = S2.charts
    agree = hessian_agreement(F5, north, south, x)
    assert agree.error <= 1e-10
    # the normal eigenvalue is positive in both charts, the tangent one vanishes
    for h in (agree.hess_a, agree.hess_b):
        eig = np.linalg.eigvalsh(h)
        assert eig[1] > 0 and abs(eig[0]) < 1e-12


def test_local_decomposition_in_a_chart(rng):
    cfg = fixture_config("f5")
    comp = cfg.zero_set_description().components[0]
    chart = S2.charts[1]
    ld = local_on_chart(F5, chart, comp, [np.pi / 2], r_max=0.5)
    assert ld.n_pieces == 1 and ld.meta["chart"] == chart.name
    w = ld.x0 + rng.uniform(-0.3, 0.3, size=(50, 2))
    w = w[np.linalg.norm(w - ld.x0, axis=1) < ld.radius]
    np.testing.assert_allclose((ld.pieces(w) ** 2).sum(1), F5(chart.to_ambient(w)), atol=1e-12)


def test_f5_global_decomposition_on_the_sphere():
    cfg = fixture_config("f5")
    gd = fixture_decomposition("f5")
    x = cfg.grid_spec().points()
    np.testing.assert_allclose(np.linalg.norm(x, axis=1), 1.0, atol=1e-14)
    err = np.abs(gd.evaluate(x) - F5(x))
    assert err.max() <= 1e-6 * (1 + np.abs(F5(x)).max())
    assert gd.domain.is_manifold and gd.n_pieces >= 2
