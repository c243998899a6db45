from __future__ import annotations

import csv
import io

import numpy as np
import pytest

from conftest import DATA, fixture_config
from sosdec.calculus import Jet2, jet2
from sosdec.config import load_config
from sosdec.exprparse import parse
from sosdec.geometry import ZeroComponent, ZeroSetDescription, adapted_frame
from sosdec.nhc import (
    FAIL_NORMAL_PD,
    FAIL_NOT_CRITICAL,
    FAIL_NOT_ZERO,
    FAIL_RANK,
    PASS,
    check_global_nhc,
    check_nhc_at,
    nhc_from_jet,
    report_csv,
    report_table,
)


def _global(cfg):
    return check_global_nhc(cfg.function_ast(), cfg.zero_set_description(), tol=cfg.tol())


@pytest.mark.parametrize("name", ["f1", "f3", "f4"])
def test_fixtures_pass_everywhere(name):
    rep = _global(fixture_config(name))
    assert rep.passed and not rep.shc
    assert all(r.conditions_agree for r in rep.reports)


def test_f2_satisfies_strict_condition():
    rep = _global(fixture_config("f2"))
    assert rep.passed and rep.shc
    assert len(rep.reports) == 4
    for r in rep.reports:
        assert r.rank_estimate == 2 and r.eigenvalues.min() > 0


def test_f1_eigenvalues_at_circle():
    cfg = fixture_config("f1")
    rep = _global(cfg)
    for r in rep.reports:
        # Hessian of (|x|^2 - 4)^2 on |x| = 2 is 8 x x^T: eigenvalues 32 and 0
        assert r.eigenvalues[0] == pytest.approx(32.0, rel=1e-12)
        assert abs(r.eigenvalues[1]) < 1e-12
        assert r.rank_estimate == 1 and r.d0_expected == 1


@pytest.mark.parametrize("name", ["x4.json", "f1_isolated.json"])
def test_negative_controls_fail_rank(name):
    rep = _global(load_config(DATA / name))
    assert not rep.passed
    assert {r.verdict for r in rep.reports} == {FAIL_RANK}


def test_not_zero_and_not_critical():
    origin = ZeroComponent.point([0.0, 0.0])
    assert check_nhc_at(parse("x1^2 + x2^2 + 1", 2), origin, None).verdict == FAIL_NOT_ZERO
    assert check_nhc_at(parse("x1 + x2^2", 2), origin, None).verdict == FAIL_NOT_CRITICAL
    assert check_nhc_at(parse("x1^2 + x2^2", 2), origin, None).verdict == PASS


def test_wrong_tangent_fails_normal_positivity():
    # the kernel of Hess(x1^2) is e2, but we declare the tangent as e1
    f = parse("x1^2", 2)
    frame = adapted_frame(None, np.zeros(2), np.array([[1.0], [0.0]]))
    r = nhc_from_jet(jet2(f, frame.x0), frame)
    assert r.rank_condition
    assert r.verdict == FAIL_NORMAL_PD
    assert not r.tangent_in_kernel and not r.conditions_agree


def test_gap_ambiguous_is_reported():
    f = parse("x1^2 + 0.00000002 * x2^2", 3)
    r = check_nhc_at(f, ZeroComponent.point([0.0, 0.0, 0.0]), None)
    assert r.gap_ambiguous
    assert r.verdict == FAIL_RANK
    assert "gap ambiguous" in report_table([r])


def test_indefinite_hessian_screen():
    r = check_nhc_at(parse("x1^2 - x2^2", 2), ZeroComponent.point([0.0, 0.0]), None)
    assert not r.psd_screen
    assert r.verdict != PASS


def test_conditions_agree_on_random_psd_quadratics(rng):
    for _ in range(30):
        d = int(rng.integers(2, 5))
        d0 = int(rng.integers(0, d))
        q, _ = np.linalg.qr(rng.normal(size=(d, d)))
        lam = np.concatenate([rng.uniform(0.5, 3.0, d - d0), np.zeros(d0)])
        h = q @ np.diag(lam) @ q.T
        frame = adapted_frame(None, np.zeros(d), q[:, d - d0:])
        jet = Jet2(0.0, np.zeros(d), h)
        r = nhc_from_jet(jet, frame)
        assert r.passed and r.conditions_agree


def test_csv_has_one_row_per_sample():
    cfg = fixture_config("f2")
    rep = _global(cfg)
    rows = list(csv.reader(io.StringIO(report_csv(rep.reports))))
    assert rows[0][:3] == ["component", "parameter", "x0"]
    assert rows[0][-1] == "verdict"
    assert len(rows) == 5
    assert {row[-1] for row in rows[1:]} == {PASS}


def test_zero_set_description_sampling_counts():
    comp = ZeroComponent.chart(["2*cos(t1)", "2*sin(t1)"], [[0, 2 * np.pi]])
    rep = check_global_nhc(parse("(x1^2 + x2^2 - 4)^2", 2), ZeroSetDescription((comp,), 2), 12)
    assert len(rep.reports) == 12
