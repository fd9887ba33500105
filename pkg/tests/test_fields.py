import json

import numpy as np
import pytest

from ccgeo import fields as F
from ccgeo.errors import NotInvolutive
from ccgeo.polynomial import PolyField


def test_heisenberg_bracket_is_vertical(bases, rng):
    X1, X2 = bases["heisenberg"].family.horizontal
    for x in rng.uniform(-1, 1, (10, 3)):
        np.testing.assert_allclose(F.bracket(X1, X2, x), [0, 0, 1], atol=1e-12)
        np.testing.assert_allclose(F.bracket(X1, X1, x), 0, atol=1e-12)


def test_grushin_bracket_example(bases):
    X1, X2 = bases["grushin"].family.horizontal
    np.testing.assert_allclose(F.bracket(X1, X2, [2.0, 5.0]), [0, 1])


def test_bracket_dimension_mismatch(bases):
    X1 = bases["heisenberg"].family.horizontal[0]
    with pytest.raises(ValueError):
        F.bracket(X1, X1, [0.0, 0.0])


def test_heisenberg_words(bases):
    b = bases["heisenberg"]
    assert b.q == 4
    assert b.words == [(1,), (2,), (1, 2), (2, 1)]
    assert list(b.lengths) == [1, 1, 2, 2]
    np.testing.assert_allclose(b.members[3]([0.3, 0.2, 0.1]), -b.members[2]([0.3, 0.2, 0.1]))


def test_step_one_basis_is_horizontal(bases):
    b = bases["euclid2in3"]
    assert b.q == 2 and b.members[:2] == b.family.horizontal


def test_martinet_member(bases):
    b = bases["martinet"]
    Y = b.members[b.index_of[(1, 1, 2)]]
    for x in np.random.default_rng(0).uniform(-1, 1, (5, 3)):
        np.testing.assert_allclose(Y(x), [0, 0, 2], atol=1e-12)


def test_basis_invariants(bases):
    for b in bases.values():
        assert b.q >= b.family.m
        assert b.lengths.max() <= b.step
        assert all(b.members[j] is b.family.horizontal[j] for j in range(b.family.m))


def test_numeric_brackets_match_exact(bases, rng):
    for name in ("heisenberg", "grushin", "martinet", "shear"):
        fam = bases[name].family
        numeric = F.generate_commutators(fam, analytic=False)
        for x in rng.uniform(-1, 1, (20, fam.dim)):
            for Yn, Ye in zip(numeric.members, bases[name].members):
                assert np.linalg.norm(Yn(x) - Ye(x)) <= 1e-6 * max(1.0, np.linalg.norm(Ye(x)))


def test_field_jacobian_consistent_with_fd(bases, rng):
    for b in bases.values():
        for Y in b.members:
            x = rng.uniform(-1, 1, b.dim)
            np.testing.assert_allclose(Y.jacobian(x), F.fd_jacobian(Y.coeffs, x), rtol=1e-5, atol=1e-7)


def test_structure_constants(bases):
    sc = F.structure_constants(bases["heisenberg"], [0.3, -0.2, 0.5])
    assert sc.c[0, 1, 2] == pytest.approx(1.0)
    assert sc.c[1, 0, 2] == pytest.approx(-1.0)
    assert np.count_nonzero(np.abs(sc.c) > 1e-12) == 2
    assert np.all(F.structure_constants(bases["euclid2in3"], [1.0, 2.0, 3.0]).c == 0)
    shear = F.structure_constants(bases["shear"], [0.0, 0.0, 1.0])
    assert np.all(shear.c == 0) and np.all(shear.residual == 0)


def test_not_involutive():
    # [d1, x1 d2] = d2 leaves the span of {d1, x1 d2} at x1 = 0, and s=1 keeps it out
    fam = F.family_from_dict({"dim": 2, "step": 1, "fields": [{"coeffs": ["1", "0"]}, {"coeffs": ["0", "x1"]}], "domain_box": [[-1, 1], [-1, 1]]})
    with pytest.raises(NotInvolutive):
        F.structure_constants(F.generate_commutators(fam), [0.0, 0.0])


def test_scaled_structure_constants_identity(bases, rng):
    b = bases["heisenberg"]
    for r in (1.0, 0.5, 0.1):
        x = rng.uniform(-1, 1, 3)
        chat = F.scaled_structure_constants(b, F.structure_constants(b, x).c, r)
        for j in range(b.q):
            for k in range(b.q):
                lhs = r ** (b.lengths[j] + b.lengths[k]) * F.bracket(b.members[j], b.members[k], x)
                rhs = sum(chat[j, k, i] * r ** b.lengths[i] * b.members[i](x) for i in range(b.q))
                assert np.linalg.norm(lhs - rhs) <= 1e-6
    chat = F.scaled_structure_constants(b, F.structure_constants(b, np.zeros(3)).c, 0.5)
    assert chat[0, 1, 2] == pytest.approx(1.0)


def test_admissible_constant(bases):
    grid = np.random.default_rng(0).uniform(-1, 1, (20, 3))
    assert F.admissible_constant_L1(bases["euclid2in3"].family, bases["euclid2in3"], grid) == pytest.approx(2.0)
    heis = bases["heisenberg"]
    small = F.admissible_constant_L1(heis.family, heis, grid[:10])
    assert np.isfinite(small) and F.admissible_constant_L1(heis.family, heis, grid) >= small


def test_family_from_dict_and_file(tmp_path):
    doc = {"name": "h", "dim": 3, "step": 2, "fields": [{"coeffs": ["1", "0", "-x2*0.5"]}, {"coeffs": ["0", "1", "x1*0.5"]}], "domain_box": [[-1, 1]] * 3}
    path = tmp_path / "fam.json"
    path.write_text(json.dumps(doc))
    fam = F.load_family(str(path))
    assert fam.dim == 3 and fam.m == 2 and fam.step == 2
    with pytest.raises(ValueError, match="unknown"):
        F.family_from_dict({**doc, "colour": "red"})
    with pytest.raises(ValueError, match="field 1"):
        F.family_from_dict({**doc, "fields": [{"coeffs": ["sin(x1)", "0", "0"]}]})
    with pytest.raises(KeyError):
        F.load_family("no-such-family")
