from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cartangeo.vecfield import (
    Chart,
    Covector,
    DimensionError,
    ExpressionError,
    Polynomial,
    PolyVectorField,
    lie_bracket,
    pairing,
    parse_polynomial,
    poly_eval,
    pushforward_projection,
)
from oracles import commutator_bracket, fd_bracket

C5 = Chart.standard(5)


def P(text, chart=C5):
    return parse_polynomial(text, chart)


def V(exprs, chart=C5):
    return PolyVectorField.from_strings(exprs, chart)


# strategies ----------------------------------------------------------------

coeffs = st.fractions(min_value=-5, max_value=5, max_denominator=6)


def polys(nvars=3, maxdeg=3):
    exps = st.tuples(*[st.integers(0, maxdeg)] * nvars).filter(lambda e: sum(e) <= maxdeg)
    return st.dictionaries(exps, coeffs, max_size=4).map(lambda d: Polynomial(d, nvars))


def fields(nvars=3, maxdeg=3):
    return st.lists(polys(nvars, maxdeg), min_size=nvars, max_size=nvars).map(lambda c: PolyVectorField(c, nvars))


rational_points = st.lists(st.fractions(min_value=-3, max_value=3, max_denominator=5), min_size=3, max_size=3)


# evaluation ----------------------------------------------------------------


def test_poly_eval_examples():
    assert poly_eval(P("x1^2", Chart(("x1",))), [3]) == 9
    assert poly_eval(Polynomial.zero(2), [Fraction(1, 3), 7]) == 0
    val = poly_eval(P("x1*x2 + (1/2)*x1^2", Chart(("x1", "x2"))), [1, 2])
    assert val == Fraction(5, 2) and isinstance(val, Fraction)


def test_poly_eval_float_and_dimension():
    p = P("x1*x2 + (1/2)*x1^2", Chart(("x1", "x2")))
    assert poly_eval(p, [1.0, 2.0]) == pytest.approx(2.5)
    with pytest.raises(DimensionError):
        poly_eval(p, [1, 2, 3])


def test_zero_terms_are_dropped():
    p = Polynomial({(1, 0): 1, (0, 1): 0}, 2)
    assert p.terms == {(1, 0): Fraction(1)}
    assert (p - p).terms == {}
    with pytest.raises(DimensionError):
        Polynomial({(1,): 1}, 2)


def test_parser_errors_carry_position():
    with pytest.raises(ExpressionError) as exc:
        P("x1 + * x2")
    assert exc.value.line == 1 and exc.value.column == 6
    with pytest.raises(ExpressionError):
        P("y7")


@given(polys(nvars=5))
def test_to_string_round_trip(p):
    assert parse_polynomial(p.to_string(), C5) == p


@given(polys(), polys(), polys())
def test_ring_laws(a, b, c):
    assert a * (b + c) == a * b + a * c
    assert (a * b) * c == a * (b * c)
    assert a - a == Polynomial.zero(3)


@given(polys(), polys(), rational_points)
def test_evaluation_is_a_homomorphism(a, b, x):
    assert poly_eval(a * b, x) == poly_eval(a, x) * poly_eval(b, x)
    assert poly_eval(a + b, x) == poly_eval(a, x) + poly_eval(b, x)


# brackets ------------------------------------------------------------------


def test_bracket_examples(m5):
    _, (X1, X2) = m5
    assert lie_bracket(X1, X1).is_zero()
    C2 = Chart.standard(2)
    assert lie_bracket(V(["1", "0"], C2), V(["0", "x1"], C2)) == V(["0", "1"], C2)
    assert lie_bracket(X1, X2) == V(["0", "0", "1", "x1", "x2"])


def test_bracket_matches_finite_differences(m5):
    _, (X1, X2) = m5
    B = lie_bracket(X1, X2)
    rng = np.random.default_rng(3)
    for x in rng.uniform(-1, 1, (10, 5)):
        assert np.max(np.abs(B(x) - fd_bracket(X1, X2, x, h=1e-4))) <= 1e-6


def test_bracket_frozen_value(m5):
    # [DERIVED] central-difference bracket at a fixed point
    _, (X1, X2) = m5
    x = np.array([0.3, -0.2, 0.1, 0.5, -0.4])
    np.testing.assert_allclose(lie_bracket(X1, X2)(x), [0.0, 0.0, 1.0, 0.3, -0.2], atol=1e-12)


def test_bracket_matches_flow_commutator():
    C3 = Chart.standard(3)
    X = V(["1 + x2^2", "x1*x3", "0"], C3)
    Y = V(["x3", "1", "x1^2 - x2"], C3)
    B = lie_bracket(X, Y)
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = np.array([Fraction(int(k), 7) for k in rng.integers(-5, 6, 3)], dtype=object)
        xf = x.astype(float)
        h1, h2 = 1e-3, 5e-4
        r = (2 * commutator_bracket(X, Y, xf, h2) - commutator_bracket(X, Y, xf, h1))
        assert np.max(np.abs(r - B(xf))) <= 1e-5


@settings(max_examples=25, deadline=None)
@given(fields(), fields(), fields())
def test_jacobi_identity(X, Y, Z):
    J = lie_bracket(lie_bracket(X, Y), Z) + lie_bracket(lie_bracket(Y, Z), X) + lie_bracket(lie_bracket(Z, X), Y)
    assert J.is_zero()


@settings(max_examples=25, deadline=None)
@given(fields(), fields(), fields(), coeffs)
def test_bilinear_antisymmetric(X, Y, Z, c):
    assert lie_bracket(X, Y) == -lie_bracket(Y, X)
    assert lie_bracket(X + Z, Y) == lie_bracket(X, Y) + lie_bracket(Z, Y)
    assert lie_bracket(X.scale(c), Y) == lie_bracket(X, Y).scale(c)


def test_bracket_dimension_mismatch():
    with pytest.raises(DimensionError):
        lie_bracket(V(["1", "0"], Chart.standard(2)), V(["1", "0", "0"], Chart.standard(3)))


# pairing and projection ----------------------------------------------------


def test_pairing_examples():
    X3 = V(["0", "0", "1", "x1", "x2"])
    assert pairing(Covector((0,) * 5, (0, 0, 1, 0, 0)), X3) == 1
    C2 = Chart.standard(2)
    assert pairing(Covector((0, 0), (1, 0)), V(["0", "1"], C2)) == 0
    assert pairing(Covector((1, 0), (2, 1)), V(["x1", "0"], C2)) == 2
    with pytest.raises(DimensionError):
        pairing(Covector((0, 0, 0), (1, 0, 0)), V(["0", "1"], C2))


def test_pushforward_projection():
    chart = Chart(("x1", "w1"))
    X = V(["1", "1"], chart)
    Q = pushforward_projection(X, [0])
    assert Q.nstate == 1 and Q.components[0] == Polynomial.constant(1, 2) and not Q.components[0].depends_on(1)
    Y = V(["w1", "0"], chart)
    Qy = pushforward_projection(Y, [0])
    assert Qy.nparams == 1 and Qy.components[0] == Polynomial.variable(1, 2)


@settings(max_examples=25, deadline=None)
@given(fields(nvars=3), rational_points)
def test_projection_keeps_components(X, x):
    Q = pushforward_projection(X, [0, 2])
    # quotient chart order: kept (x1, x3) then dropped x2 as parameter
    assert Q.at([x[0], x[2], x[1]]) == [X.at(x)[0], X.at(x)[2]]
