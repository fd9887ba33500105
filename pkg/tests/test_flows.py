import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccgeo import flows as FL
from ccgeo import multilinear as ml
from ccgeo.errors import EscapedDomain


def test_flow_closed_forms(bases):
    g = bases["grushin"]
    np.testing.assert_allclose(FL.flow(g.members[1], [2.0, 0.0], 1.0, fam=g.family), [2.0, 2.0], atol=1e-9)
    e = bases["euclid2in3"]
    np.testing.assert_allclose(FL.flow(e.members[0], [0.1, 0.2, 0.3], 0.7, fam=e.family), [0.8, 0.2, 0.3], atol=1e-12)
    np.testing.assert_allclose(FL.flow(e.members[0], [0.1, 0.2, 0.3], 0.0, fam=e.family), [0.1, 0.2, 0.3])


@settings(max_examples=20, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_flow_group_law_and_inverse(t, s):
    from ccgeo import fields as F

    b = F.generate_commutators(F.builtin_family("martinet"))
    X = b.members[1]
    x = np.array([0.3, -0.2, 0.1])
    a = FL.flow(X, FL.flow(X, x, t, fam=b.family), s, fam=b.family)
    np.testing.assert_allclose(a, FL.flow(X, x, t + s, fam=b.family), atol=1e-8)
    np.testing.assert_allclose(FL.flow(X, FL.flow(X, x, t, fam=b.family), -t, fam=b.family), x, atol=1e-8)


def test_flow_escape(bases):
    e = bases["heisenberg"]
    with pytest.raises(EscapedDomain):
        FL.flow(e.members[0], np.zeros(3), 5.0, fam=e.family)


def test_flow_combination(bases):
    h = bases["heisenberg"]
    np.testing.assert_allclose(FL.flow_combination([1, 1, 0, 0], h, np.zeros(3), 1.0), [1, 1, 0], atol=1e-9)
    np.testing.assert_allclose(FL.flow_combination([0, 0, 0, 0], h, [0.1, 0.2, 0.3], 1.0), [0.1, 0.2, 0.3])
    np.testing.assert_allclose(FL.flow_combination([0, 1, 0, 0], h, [0.1, 0.2, 0.3], 0.4), FL.flow(h.members[1], [0.1, 0.2, 0.3], 0.4, fam=h.family), atol=1e-9)


def test_exp_ap_heisenberg_exact(bases):
    h = bases["heisenberg"]
    for hv in (1e-4, -3e-3, 0.02):
        np.testing.assert_allclose(FL.approx_exponential((1, 2), hv, np.zeros(3), h.family), [0, 0, hv], atol=1e-12)
    np.testing.assert_allclose(FL.approx_exponential((1, 2), 0.0, [0.1, 0.2, 0.3], h.family), [0.1, 0.2, 0.3])
    np.testing.assert_allclose(FL.approx_exponential((2,), 0.3, [0.1, 0.2, 0.3], h.family), FL.flow(h.members[1], [0.1, 0.2, 0.3], 0.3, fam=h.family), atol=1e-9)


def test_exp_ap_remainder_order(bases):
    from ccgeo.acceptance import remainder_slope

    m = bases["martinet"]
    slope, _ = remainder_slope(m.family, m, (1, 2), np.array([0.2, 0.1, 0.0]), np.logspace(-3, -1, 7))
    assert slope >= 1 + 1 / 2 - 0.15


def test_box_norm_and_grid():
    assert FL.box_norm([0.04, 0.09, 0.01], [1, 1, 2]) == pytest.approx(0.1)
    assert FL.box_norm([0, 0], [1, 2]) == 0.0
    assert FL.box_norm([0.3, -0.5], [1, 1]) == pytest.approx(0.5)
    g = FL.box_grid(np.array([1, 2]), 0.3, 5)
    assert g.shape == (25, 2)
    assert np.abs(g[:, 0]).max() == pytest.approx(0.3) and np.abs(g[:, 1]).max() == pytest.approx(0.09)


def test_jacobian_of_affine_map():
    A = np.array([[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]])
    np.testing.assert_allclose(FL.jacobian_of_map(lambda h: A @ h + 1, np.array([0.2, 0.1])), A, atol=1e-10)


def test_map_E_examples(bases):
    e = bases["euclid2in3"]
    I = ml.TupleIndex.from_basis(e, (1, 2))
    np.testing.assert_allclose(FL.map_E(e, I, [0, 0, 5.0], 0.1, [0.3, 0.4]), [0.03, 0.04, 5.0], atol=1e-12)
    h = bases["heisenberg"]
    I3 = ml.TupleIndex.from_basis(h, (1, 2, 3))
    x = np.array([0.1, -0.2, 0.3])
    np.testing.assert_allclose(FL.map_E(h, I3, x, 0.1, np.zeros(3)), x)
    J = FL.EMap(h, I3, x, 0.1).jacobian(np.zeros(3))
    expect = np.stack([0.1 * h.members[0](x), 0.1 * h.members[1](x), 0.01 * h.members[2](x)], axis=1)
    np.testing.assert_allclose(J, expect, atol=1e-8)


def test_map_E_single_factor(bases):
    h = bases["heisenberg"]
    I = ml.TupleIndex.from_basis(h, (2,))
    x = np.array([0.1, -0.2, 0.3])
    np.testing.assert_allclose(FL.map_E(h, I, x, 0.1, [0.7]), FL.flow(h.members[1], x, 0.07, fam=h.family), atol=1e-10)


def test_map_Phi_examples(bases):
    e = bases["euclid2in3"]
    I = ml.TupleIndex.from_basis(e, (1, 2))
    np.testing.assert_allclose(FL.map_Phi(e, I, [1.0, 2.0, 3.0], 1.0, [0.3, -0.2]), [1.3, 1.8, 3.0], atol=1e-12)
    np.testing.assert_allclose(FL.PhiMap(e, I, np.zeros(3), 1.0).jacobian(np.zeros(2)), [[1, 0], [0, 1], [0, 0]], atol=1e-9)
    h = bases["heisenberg"]
    np.testing.assert_allclose(FL.map_Phi(h, (1, 2, 3), np.zeros(3), 1.0, [1.0, 1.0, 0.0]), [1, 1, 0], atol=1e-9)
    np.testing.assert_allclose(FL.map_Phi(h, (1, 2, 3), [0.1, 0.2, 0.3], 0.1, np.zeros(3)), [0.1, 0.2, 0.3])


def test_jacobian_comparability(bases, rng):
    for name in ("heisenberg", "grushin", "martinet"):
        b = bases[name]
        x = np.zeros(b.dim)
        I = ml.select_maximal_tuple(b, x, 0.1)
        E = FL.EMap(b, I, x, 0.1)
        base = ml.wedge_norm(np.stack([0.1 ** b.lengths[i] * b.members[i](x) for i in I.zero_based], axis=1))
        for h in FL.box_grid(E.ell, 0.3, 3):
            ratio = ml.wedge_norm(E.jacobian(h)) / base
            assert 0.25 <= ratio <= 4


def test_batch_matches_scalar(bases, rng):
    h = bases["martinet"]
    E = FL.EMap(h, ml.select_maximal_tuple(h, np.zeros(3), 0.1), np.zeros(3), 0.1)
    H = rng.uniform(-0.3, 0.3, (6, 3))
    Y, st = E.batch(H)
    assert np.all(st == 0)
    for k in range(6):
        np.testing.assert_allclose(Y[k], E(H[k]), atol=1e-13)
