import numpy as np
import pytest

from ccgeo import measures as MS
from ccgeo import multilinear as ml
from ccgeo.polynomial import Poly


def _x1(n=3):
    return MS.SuiteFunction("x1", Poly.var(n, 0))


def test_euclid_disk_area(bases):
    e = bases["euclid2in3"]
    x = np.array([0.0, 0.0, 0.4])
    I = ml.select_maximal_tuple(e, x, 0.1)
    rep = MS.sigma_ball(e, I, x, 0.1, M=2000, seed=3)
    exact = np.pi * 0.1**2
    assert rep.p == 2 and rep.sample_size == 2000
    assert abs(rep.sigma_p - exact) <= max(0.05 * exact, 3 * rep.std_error)
    assert rep.std_error < 0.05 * exact


def test_sigma_vanishes_with_radius(bases):
    e = bases["euclid2in3"]
    x = np.zeros(3)
    I = ml.select_maximal_tuple(e, x, 0.1)
    small = MS.sigma_ball(e, I, x, 1e-3, M=200, seed=0).sigma_p
    assert 0 < small <= 2 * np.pi * 1e-6


def test_heisenberg_homogeneity_independent_draws(bases):
    # without shared draws the ratio is only statistically 16
    h = bases["heisenberg"]
    x = np.zeros(3)
    I = ml.select_maximal_tuple(h, x, 0.1)
    a = MS.sigma_ball(h, I, x, 0.05, M=300, seed=11)
    b = MS.sigma_ball(h, I, x, 0.1, M=300, seed=12)
    ratio = b.sigma_p / a.sigma_p
    se = ratio * np.hypot(a.std_error / a.sigma_p, b.std_error / b.sigma_p)
    assert abs(ratio - 16) <= max(0.2 * 16, 3 * se)


def test_doubling_euclid_and_offcenter_grushin(bases):
    rep = MS.doubling_ratio(bases["euclid2in3"], np.zeros(3), 0.1, M=200, seed=0)
    assert rep.ratio == pytest.approx(4.0, rel=0.1)
    # away from the singular line Grushin is locally Euclidean
    g = MS.doubling_ratio(bases["grushin"], np.array([0.3, 0.0]), 0.05, M=200, seed=0)
    assert abs(g.ratio - 4.0) <= max(0.4, 3 * g.std_error)
    with pytest.raises(ValueError):
        MS.doubling_ratio(bases["euclid2in3"], np.zeros(3), 0.0)


def test_default_suite_composition():
    suite = MS.default_suite(3)
    names = [f.name for f in suite]
    assert names[:3] == ["x1", "x2", "x3"]
    assert len(suite) == 3 + 6 + 5
    again = MS.default_suite(3)
    y = np.array([[0.1, -0.2, 0.3]])
    assert all(a(y)[0] == b(y)[0] for a, b in zip(suite, again))
    np.testing.assert_allclose(suite[0].grad(y), [[1.0, 0.0, 0.0]])


@pytest.fixture(scope="module")
def euclid_poincare(bases):
    suite = [_x1(), MS.SuiteFunction("const", Poly.const(3, 2.5)), _x1().scaled(10)]
    return MS.poincare_ratio(bases["euclid2in3"], np.zeros(3), 0.1, suite, M=1500, seed=0)


def test_poincare_planar_value(euclid_poincare):
    # disk: int_B |x1| = 4r^3/3, r * int_{3B} |d1 x1| = 9 pi r^3
    assert euclid_poincare.ratios["x1"] == pytest.approx(4 / (27 * np.pi), rel=0.06)
    assert euclid_poincare.ratios["x1"] <= 2


def test_poincare_constant_and_scaling(euclid_poincare):
    assert euclid_poincare.lhs["const"] == 0.0
    assert euclid_poincare.ratios["const"] == 0.0
    assert "const" not in euclid_poincare.flagged
    assert euclid_poincare.ratios["10*x1"] == pytest.approx(euclid_poincare.ratios["x1"], rel=1e-9)


def test_poincare_heisenberg_bounded(bases):
    rep = MS.poincare_ratio(bases["heisenberg"], np.zeros(3), 0.1, M=200, seed=0)
    assert 0 < rep.ratio <= 10
    assert rep.flagged == []
