import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ccgeo import multilinear as ml
from ccgeo.errors import DegeneratePoint, DegenerateTuple, NotInSpan

mats = st.integers(1, 4).flatmap(lambda p: st.integers(p, 5).flatmap(lambda n: arrays(float, (n, p), elements=st.floats(-2, 2, allow_nan=False, allow_subnormal=False))))


@settings(max_examples=60, deadline=None)
@given(mats)
def test_wedge_norm_is_gram_volume(M):
    gram = np.linalg.det(M.T @ M)
    assert ml.wedge_norm(M) ** 2 == pytest.approx(max(gram, 0.0), rel=1e-7, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(mats, st.data())
def test_cramer_reconstructs_span(M, data):
    if ml.wedge_norm(M) < 1e-3 * max(1.0, np.prod(np.linalg.norm(M, axis=0))):
        return
    xi = data.draw(arrays(float, (M.shape[1],), elements=st.floats(-3, 3, allow_nan=False, allow_subnormal=False)))
    W = M @ xi
    got = ml.cramer_solve(M, W)
    assert np.linalg.norm(M @ got - W) <= 1e-9 * max(np.linalg.norm(W), 1.0)


def test_cramer_degenerate():
    with pytest.raises(DegenerateTuple):
        ml.cramer_solve(np.array([[1.0, 2.0], [2.0, 4.0]]), np.array([1.0, 2.0]))


def test_wedge_components_examples(bases):
    I = ml.TupleIndex.from_basis(bases["euclid2in3"], (1, 2))
    w = ml.wedge_components(bases["euclid2in3"], I, np.zeros(3))
    assert w.norm == pytest.approx(1.0)
    assert w.norm**2 == pytest.approx(sum(v**2 for v in w.components.values()))
    g = bases["grushin"]
    assert ml.wedge_components(g, ml.TupleIndex.from_basis(g, (1, 2)), [0.0, 0.0]).norm == 0.0
    assert ml.wedge_components(g, ml.TupleIndex.from_basis(g, (1, 2)), [2.0, 0.0]).norm == pytest.approx(2.0)


def test_cramer_coordinates_examples(bases):
    h = bases["heisenberg"]
    I = ml.TupleIndex.from_basis(h, (1, 2))
    x = np.zeros(3)
    W = 2 * h.members[0](x) + 3 * h.members[1](x)
    np.testing.assert_allclose(ml.cramer_coordinates(h, I, x, W).xi, [2, 3])
    np.testing.assert_allclose(ml.cramer_coordinates(h, I, x, h.members[1](x)).xi, [0, 1])
    e = bases["euclid2in3"]
    with pytest.raises(NotInSpan):
        ml.cramer_coordinates(e, ml.TupleIndex.from_basis(e, (1, 2)), x, np.array([0, 0, 1.0]))


def test_lambda_vector(bases):
    assert ml.lambda_vector(bases["euclid2in3"], 2, np.zeros(3), 1.0) == pytest.approx(1.0)
    assert ml.lambda_vector(bases["heisenberg"], 3, np.zeros(3), 1.0) == pytest.approx(np.sqrt(2))
    vals = [ml.lambda_vector(bases["heisenberg"], 3, np.zeros(3), r) for r in (0.1, 0.3, 0.9)]
    assert vals == sorted(vals)


def test_pointwise_rank(bases):
    assert ml.pointwise_rank(bases["heisenberg"], [0.4, -1.0, 0.3]) == 3
    assert ml.pointwise_rank(bases["shear"], [0.0, 0.0, 0.0]) == 1
    assert ml.pointwise_rank(bases["shear"], [0.0, 0.0, 1.0]) == 2


def test_nu_infimum(bases):
    assert ml.nu_infimum(bases["euclid2in3"], np.random.default_rng(0).uniform(-1, 1, (5, 3))) == pytest.approx(1.0)
    assert ml.nu_infimum(bases["grushin"], [[0.0, 0.0]]) == pytest.approx(np.sqrt(2))


def test_maximal_tuple_examples(bases):
    g = bases["grushin"]
    assert ml.select_maximal_tuple(g, [0.5, 0.0], 0.1).indices == (1, 2)
    assert ml.select_maximal_tuple(g, [0.001, 0.0], 0.1).indices == (1, 3)
    assert ml.select_maximal_tuple(bases["heisenberg"], np.zeros(3), 0.37).indices == (1, 2, 3)


def test_maximal_tuple_is_exhaustive_argmax(bases, rng):
    for name, b in bases.items():
        x = rng.uniform(-0.5, 0.5, b.dim)
        r = 0.2
        I = ml.select_maximal_tuple(b, x, r)
        best = ml.wedge_components(b, I, x).norm * r**I.degree
        for J in itertools.combinations(range(1, b.q + 1), I.p):
            T = ml.TupleIndex.from_basis(b, J)
            assert ml.wedge_components(b, T, x).norm * r**T.degree <= best * (1 + 1e-12) + 1e-300


def test_maximal_tuple_scale_invariant(bases):
    from ccgeo import fields as F
    from ccgeo.polynomial import PolyField

    fam = bases["martinet"].family
    scaled = F.Family(tuple(F.VectorField.from_poly(X.poly.scale(3.0), X.word) for X in fam.horizontal), fam.step, fam.domain_box, "scaled")
    sb = F.generate_commutators(scaled)
    x = np.array([0.3, 0.1, -0.2])
    assert ml.select_maximal_tuple(sb, x, 0.1) == ml.select_maximal_tuple(bases["martinet"], x, 0.1)


def test_degenerate_point():
    from ccgeo import fields as F

    fam = F.family_from_dict({"dim": 2, "step": 1, "fields": [{"coeffs": ["x1", "0"]}], "domain_box": [[-1, 1], [-1, 1]]})
    with pytest.raises(DegeneratePoint):
        ml.select_maximal_tuple(F.generate_commutators(fam), [0.0, 0.3], 0.1)


def test_tuple_index_validation(bases):
    with pytest.raises(ValueError):
        ml.TupleIndex.from_basis(bases["heisenberg"], (1, 5))
    with pytest.raises(ValueError):
        ml.TupleIndex((2, 1), 2)
    assert str(ml.TupleIndex.from_basis(bases["heisenberg"], (1, 2, 3))) == "(1,2,3)"
