import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from ccgeo.polynomial import ParseError, Poly, PolyField, parse_poly

coef = st.floats(-3, 3, allow_nan=False).map(lambda v: round(v, 3))


@st.composite
def polys(draw, n=3, max_terms=4, max_deg=2):
    p = Poly(n)
    for _ in range(draw(st.integers(0, max_terms))):
        e = tuple(draw(st.integers(0, max_deg)) for _ in range(n))
        term = Poly.const(n, draw(coef))
        for i, k in enumerate(e):
            term = term * Poly.var(n, i) ** k
        p = p + term
    return p


@st.composite
def poly_fields(draw, n=3):
    return PolyField(tuple(draw(polys(n)) for _ in range(n)))


def test_parse_and_evaluate():
    p = parse_poly("x1^2 - 3*x2*x3 + 0.5", 3)
    assert p([2.0, 1.0, 4.0]) == pytest.approx(4 - 12 + 0.5)
    assert parse_poly("-(x1 + 1)^2", 1)([2.0]) == pytest.approx(-9.0)


@pytest.mark.parametrize("bad", ["x4", "x1 +", "sin(x1)", "x1^-1", "x1 / 2"])
def test_parse_rejects(bad):
    with pytest.raises(ParseError):
        parse_poly(bad, 3)


def test_diff_matches_sympy():
    xs = sympy.symbols("x1:4")
    p = parse_poly("x1^3*x2 - 2*x3^2*x1 + 7", 3)
    for i in range(3):
        expect = sympy.diff(p.to_sympy(xs), xs[i])
        assert sympy.simplify(p.diff(i).to_sympy(xs) - expect) == 0


@settings(max_examples=40, deadline=None)
@given(poly_fields(), poly_fields())
def test_bracket_antisymmetric(V, W):
    x = np.array([0.3, -0.7, 1.1])
    np.testing.assert_allclose(V.bracket(W)(x), -W.bracket(V)(x), atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(poly_fields(), poly_fields(), poly_fields())
def test_jacobi_identity(X, Y, Z):
    x = np.array([0.2, 0.5, -0.4])
    total = X.bracket(Y.bracket(Z)) + Y.bracket(Z.bracket(X)) + Z.bracket(X.bracket(Y))
    assert np.linalg.norm(total(x)) <= 1e-8 * max(1.0, np.abs(X(x)).max() ** 3)


def test_bracket_against_sympy_oracle():
    xs = sympy.symbols("x1:4")
    V = PolyField.from_strings(["1", "0", "-x2*0.5"], 3)
    W = PolyField.from_strings(["0", "x3", "x1^2"], 3)
    Vs = sympy.Matrix([c.to_sympy(xs) for c in V.comps])
    Ws = sympy.Matrix([c.to_sympy(xs) for c in W.comps])
    expect = Ws.jacobian(xs) * Vs - Vs.jacobian(xs) * Ws
    got = V.bracket(W)
    for c, e in zip(got.comps, expect):
        assert sympy.simplify(c.to_sympy(xs) - e) == 0
