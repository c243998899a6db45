from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sosdec.exprparse import (
    Binary,
    Const,
    DomainError,
    ExponentError,
    ExprSyntaxError,
    Pow,
    UnknownIdentifierError,
    Var,
    VariableIndexError,
    evaluate,
    linear_map,
    parse,
    substitute,
    to_source,
)


def test_precedence_and_associativity():
    e = parse("1 - 2 - 3 * x1 ^ 2 / 4", 1)
    assert evaluate(e, [2.0]) == pytest.approx(1 - 2 - 3 * 4 / 4)
    assert evaluate(parse("-x1^2", 1), [3.0]) == -9.0
    assert evaluate(parse("2^3^1", 1), [0.0]) == 8.0
    assert evaluate(parse("(x1 + x2) * x2", 2), [1.0, 2.0]) == 6.0


def test_functions_and_pi():
    e = parse("exp(x1) + ln(x2) + sin(pi/2) + cos(0) + sqrt(4)", 2)
    assert evaluate(e, [0.0, math.e]) == pytest.approx(1 + 1 + 1 + 1 + 2)


def test_ast_nodes():
    e = parse("x2^3", 2)
    assert e.root == Pow(Var(1), 3)
    assert parse("1 + x1", 1).root == Binary("+", Const(1.0), Var(0))


def test_syntax_error_offset():
    with pytest.raises(ExprSyntaxError) as exc:
        parse("x1 +", 1)
    assert exc.value.offset == 4
    with pytest.raises(ExprSyntaxError):
        parse("(x1", 1)
    with pytest.raises(ExprSyntaxError):
        parse("x1 $ 2", 1)


def test_unknown_identifier_and_index():
    with pytest.raises(UnknownIdentifierError):
        parse("tan(x1)", 1)
    with pytest.raises(VariableIndexError):
        parse("x3", 2)
    with pytest.raises(VariableIndexError):
        parse("x0", 2)


def test_exponent_must_be_nonnegative_integer():
    assert evaluate(parse("x1^(1+1)", 1), [3.0]) == 9.0
    with pytest.raises(ExponentError):
        parse("x1^0.5", 1)
    with pytest.raises(ExponentError):
        parse("x1^-1", 1)
    with pytest.raises(ExponentError):
        parse("x1^x1", 1)


def test_domain_errors():
    with pytest.raises(DomainError):
        evaluate(parse("ln(x1)", 1), [0.0])
    with pytest.raises(DomainError):
        evaluate(parse("sqrt(x1)", 1), [-1.0])
    with pytest.raises(DomainError):
        evaluate(parse("1/x1", 1), [0.0])


def test_batch_evaluation_matches_pointwise(rng):
    e = parse("sin(x1) * x2^2 - exp(x1 - x2)", 2)
    pts = rng.normal(size=(50, 2))
    batch = evaluate(e, pts)
    single = np.array([evaluate(e, p) for p in pts])
    assert batch.shape == (50,)
    np.testing.assert_array_equal(batch, single)
    assert isinstance(evaluate(e, pts[0]), float)


def test_prefix_t_for_charts():
    e = parse("2*cos(t1)", 1, prefix="t")
    assert evaluate(e, [0.0]) == 2.0
    assert str(e).count("t1") == 1


def test_substitute_composes():
    f = parse("x1^2 + x2", 2)
    g = [parse("cos(x1)", 1), parse("sin(x1)", 1)]
    h = substitute(f, g)
    t = 0.7
    assert evaluate(h, [t]) == pytest.approx(math.cos(t) ** 2 + math.sin(t))


def test_linear_map():
    m = np.array([[1.0, -2.0], [0.5, 3.0]])
    b = np.array([-1.0, 2.0])
    exprs = linear_map(m, b)
    u = np.array([0.3, -0.4])
    got = [evaluate(e, u) for e in exprs]
    np.testing.assert_allclose(got, m @ u + b, rtol=0, atol=1e-15)


_leaf = st.one_of(
    st.sampled_from(["x1", "x2", "pi"]),
    st.floats(0.1, 10, allow_nan=False).map(repr),
)


def _compose(children):
    return st.one_of(
        st.tuples(children, st.sampled_from("+-*"), children).map(lambda t: f"({t[0]} {t[1]} {t[2]})"),
        st.tuples(st.sampled_from(["sin", "cos", "exp"]), children).map(lambda t: f"{t[0]}({t[1]} / 10)"),
        st.tuples(children, st.integers(0, 3)).map(lambda t: f"({t[0]})^{t[1]}"),
        children.map(lambda c: f"-{c}"),
    )


expressions = st.recursive(_leaf, _compose, max_leaves=8)


@settings(max_examples=150, deadline=None)
@given(expressions, st.tuples(st.floats(-2, 2), st.floats(-2, 2)))
def test_pretty_print_round_trip(src, point):
    e = parse(src, 2)
    again = parse(to_source(e.root), 2)
    assert again == e
    v1, v2 = evaluate(e, point), evaluate(again, point)
    assert v1 == v2 or (math.isnan(v1) and math.isnan(v2))


@settings(max_examples=150, deadline=None)
@given(expressions, st.tuples(st.floats(-2, 2), st.floats(-2, 2)))
def test_matches_python_evaluation(src, point):
    py = src.replace("^", "**")
    env = {"sin": math.sin, "cos": math.cos, "exp": math.exp, "pi": math.pi,
           "x1": point[0], "x2": point[1]}
    try:
        expected = eval(py, {"__builtins__": {}}, env)  # oracle: Python's own parser
    except OverflowError:
        return
    got = evaluate(parse(src, 2), point)
    assert got == pytest.approx(expected, rel=1e-12, abs=1e-12)
