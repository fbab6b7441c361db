import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from kramers_exit.expr import (
    ArityError,
    EvaluationError,
    ParseError,
    ScalarField,
    UnknownIdentifierError,
    VectorField,
    add,
    const,
    differentiate,
    divergence,
    evaluate,
    is_const,
    mul,
    neg,
    parse,
    parse_vector,
    power,
    to_string,
    var,
)

D = 3


def _sources(allowed_funcs, ops, max_leaves=10):
    names = st.sampled_from([f"x{i}" for i in range(1, D + 1)])
    numbers = st.one_of(
        st.integers(0, 9).map(str),
        st.sampled_from(["0.5", "1.25", "3.75", "0.1", "2e-3"]),
    )
    leaf = st.one_of(names, numbers)

    def extend(child):
        return st.one_of(
            st.tuples(child, st.sampled_from(ops), child).map(lambda t: f"({t[0]} {t[1]} {t[2]})"),
            st.tuples(child, st.integers(0, 3)).map(lambda t: f"({t[0]})^{t[1]}"),
            st.tuples(st.sampled_from(allowed_funcs), child).map(lambda t: f"{t[0]}({t[1]})"),
            child.map(lambda s: f"-{s}"),
        )

    return st.recursive(leaf, extend, max_leaves=max_leaves)


ANY_SOURCE = _sources(["exp", "ln", "sin", "cos", "sqrt", "tanh"], ["+", "-", "*", "/"])
SMOOTH_SOURCE = _sources(["exp", "sin", "cos", "tanh"], ["+", "-", "*"], max_leaves=8)
POINTS = st.lists(st.floats(-2, 2, allow_nan=False), min_size=D, max_size=D)


def _fd_partial(e, x, i, step=1e-5):
    xp, xm = list(x), list(x)
    xp[i] += step
    xm[i] -= step
    return (evaluate(e, xp) - evaluate(e, xm)) / (2 * step)


# -- parse ------------------------------------------------------------------


def test_parse_quadratic_evaluates_half_norm():
    e = parse("0.5*(x1^2+x2^2)", 2)
    assert evaluate(e, [0.0, 1.0]) == 0.5
    assert evaluate(e, [3.0, -4.0]) == 12.5


def test_parse_product():
    assert evaluate(parse("x1*x2", 2), [2.0, 3.0]) == 6.0


def test_unknown_identifier_beyond_dimension():
    with pytest.raises(UnknownIdentifierError):
        parse("x3", 2)
    with pytest.raises(UnknownIdentifierError):
        parse("y + 1", 2)


def test_syntax_error_reports_byte_offset():
    with pytest.raises(ParseError) as info:
        parse("x1 + * x2", 2)
    assert info.value.offset == 5


def test_offset_counts_bytes_not_characters():
    with pytest.raises(ParseError) as info:
        parse("x1 + é", 2)
    assert info.value.offset == 5
    with pytest.raises(ParseError) as info:
        parse("(x1 + 1", 1)
    assert info.value.offset == 7


def test_arity_mismatch():
    with pytest.raises(ArityError):
        parse("exp(x1, x2)", 2)
    with pytest.raises(ArityError):
        parse("sin()", 1)


def test_power_precedence_and_associativity():
    assert evaluate(parse("-x1^2", 1), [3.0]) == -9.0
    assert evaluate(parse("2^3^2", 1), [0.0]) == 512.0


def test_non_integer_exponent_becomes_exp_ln():
    e = parse("x1^0.5", 1)
    assert "exp" in to_string(e) and "ln" in to_string(e)
    assert evaluate(e, [4.0]) == pytest.approx(2.0, rel=1e-15)
    with pytest.raises(EvaluationError):
        evaluate(e, [-1.0])


# -- eval -------------------------------------------------------------------


def test_eval_exp_at_zero():
    assert evaluate(parse("exp(x1)", 2), [0.0, 5.0]) == 1.0


def test_eval_division_by_zero_carries_point():
    with pytest.raises(EvaluationError) as info:
        evaluate(parse("1/x1", 2), [0.0, 7.0])
    assert info.value.x.tolist() == [0.0, 7.0]


def test_eval_ln_of_nonpositive_faults():
    with pytest.raises(EvaluationError):
        evaluate(parse("ln(x1)", 1), [-1.0])


def test_compiled_field_reports_nan_instead_of_propagating():
    f = ScalarField.parse("sqrt(x1)", 1)
    with pytest.raises(EvaluationError):
        f(np.array([[1.0, -1.0]]))


# -- differentiate --------------------------------------------------------------


def test_derivative_of_half_norm_is_x1():
    d = differentiate(parse("0.5*(x1^2+x2^2)", 2), 0)
    assert d == var(0)


def test_derivative_of_product():
    assert differentiate(parse("x1*x2", 2), 1) == var(0)


def test_trivial_subtrees_fold():
    assert is_const(mul(const(0.0), var(1)), 0.0)
    assert add(var(0), const(0.0)) == var(0)
    assert power(var(0), 1) == var(0)
    assert is_const(power(var(0), 0), 1.0)
    assert differentiate(parse("x1^2", 1), 0) == mul(const(2.0), var(0))


def test_random_polynomials_match_finite_differences():
    rng = np.random.default_rng(11)
    for _ in range(20):
        terms = []
        for _ in range(rng.integers(1, 5)):
            c = rng.uniform(-3, 3)
            powers = "*".join(f"x{i + 1}^{rng.integers(0, 4)}" for i in range(D))
            terms.append(f"({c!r})*{powers}")
        e = parse(" + ".join(terms), D)
        x = rng.uniform(-2, 2, D)
        for i in range(D):
            exact = evaluate(differentiate(e, i), x)
            fd = _fd_partial(e, x, i)
            assert abs(exact - fd) <= 1e-6 * max(1.0, abs(exact))


def test_gradient_matches_finite_differences_at_100_points():
    f = ScalarField.parse("exp(-x1^2)*sin(x2) + tanh(x1*x3) + x2^3*cos(x3)", D)
    rng = np.random.default_rng(5)
    for x in rng.uniform(-2, 2, (100, D)):
        g = f.gradient(x)
        fd = np.array([_fd_partial(f.expression, x, i) for i in range(D)])
        assert np.linalg.norm(g - fd) <= 1e-6 * max(1.0, np.linalg.norm(g))


# -- divergence -------------------------------------------------------------


def test_divergence_of_transverse_field():
    assert divergence(parse_vector(["x1*x2", "-x1^2"], 2)) == var(1)
    assert divergence(parse_vector(["-x1*x2", "x1^2"], 2)) == neg(var(1))


def test_divergence_of_zero_and_identity():
    assert is_const(divergence(parse_vector(["0", "0"], 2)), 0.0)
    assert is_const(divergence(parse_vector(["x1", "x2"], 2)), 2.0)
    assert VectorField.zeros(3).is_zero


# -- properties -------------------------------------------------------------


@settings(max_examples=300, deadline=None)
@given(ANY_SOURCE)
def test_round_trip_is_structural(src):
    e = parse(src, D)
    assert parse(to_string(e), D) == e


@settings(max_examples=200, deadline=None)
@given(SMOOTH_SOURCE, SMOOTH_SOURCE, st.floats(-5, 5, allow_nan=False), POINTS)
def test_derivative_is_linear(s1, s2, a, x):
    e1, e2 = parse(s1, D), parse(s2, D)
    combo = add(mul(const(a), e1), e2)
    try:
        lhs = evaluate(differentiate(combo, 0), x)
        rhs = a * evaluate(differentiate(e1, 0), x) + evaluate(differentiate(e2, 0), x)
    except EvaluationError:
        assume(False)
    assume(math.isfinite(lhs) and math.isfinite(rhs) and abs(lhs) < 1e12)
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs), abs(rhs))


@settings(max_examples=200, deadline=None)
@given(SMOOTH_SOURCE, POINTS)
def test_symbolic_hessian_is_symmetric(src, x):
    e = parse(src, D)
    for i in range(D):
        for j in range(i + 1, D):
            try:
                hij = evaluate(differentiate(differentiate(e, i), j), x)
                hji = evaluate(differentiate(differentiate(e, j), i), x)
            except EvaluationError:
                assume(False)
            assume(math.isfinite(hij) and abs(hij) < 1e12)
            assert abs(hij - hji) <= 1e-12 * max(1.0, abs(hij))


@settings(max_examples=200, deadline=None)
@given(SMOOTH_SOURCE, POINTS)
def test_symbolic_gradient_matches_finite_differences(src, x):
    e = parse(src, D)
    try:
        fx = evaluate(e, x)
        for i in range(D):
            exact = evaluate(differentiate(e, i), x)
            fd = _fd_partial(e, x, i)
            assume(all(math.isfinite(v) for v in (fx, exact, fd)) and abs(fx) < 1e8)
            assert abs(exact - fd) <= 1e-6 * (1.0 + abs(exact) + abs(fx))
    except EvaluationError:
        assume(False)


def test_expressions_are_immutable():
    e = parse("x1 + 1", 1)
    with pytest.raises(AttributeError):
        e.op = "-"
