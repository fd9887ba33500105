import numpy as np
import pytest

from ccgeo import flows as FL
from ccgeo import metrics as MT
from ccgeo import multilinear as ml
from ccgeo import pullback as PB
from ccgeo.errors import NotInjective


def _setup(bases, name, r=0.1):
    b = bases[name]
    x = np.zeros(b.dim) if name != "shear" else np.array([0.0, 0.0, 1.0])
    return b, ml.select_maximal_tuple(b, x, r), x


def test_chi_at_origin_and_euclid(bases):
    for name in ("euclid2in3", "heisenberg", "grushin", "martinet", "shear"):
        b, I, x = _setup(bases, name)
        assert PB.chi_matrix(b, I, x, 0.1, np.zeros(I.p)).norm <= 1e-3
    b, I, x = _setup(bases, "euclid2in3")
    res = PB.chi_matrix(b, I, x, 0.1, [0.4, -0.3])
    assert res.norm <= 1e-8 and res.residual <= 1e-10


def test_chi_linear_bound_heisenberg(bases):
    b, I, x = _setup(bases, "heisenberg")
    fe = PB.FrameExpansion(FL.EMap(b, I, x, 0.1))
    fit = PB.fit_chi_bound(fe, 0.15, 7)
    assert np.isfinite(fit.C) and fit.slope >= 0.9 and fit.max_residual <= 1e-4
    finer = PB.fit_chi_bound(fe, 0.15, 9)
    assert abs(finer.C - fit.C) <= 0.2 * fit.C


def test_rescaled_constants(bases, rng):
    b, I, x = _setup(bases, "heisenberg")
    ct, res = PB.rescaled_constants(b, I, 0.1, x)
    assert ct[0, 1, 2] == pytest.approx(1.0) and res <= 1e-8
    e, Ie, xe = _setup(bases, "euclid2in3")
    assert np.all(PB.rescaled_constants(e, Ie, 0.1, xe)[0] == 0)
    m, Im, xm = _setup(bases, "martinet")
    for y in rng.uniform(-0.05, 0.05, (5, 3)):
        direct = PB.rescaled_constants_direct(m, Im, 0.1, y, Im.zero_based)
        G = PB.scaled_tuple_frame(m, Im, y, 0.1)
        for i in range(Im.p):
            for j in range(Im.p):
                Yi, Yj = (m.members[Im.zero_based[a]] for a in (i, j))
                li, lj = (m.lengths[Im.zero_based[a]] for a in (i, j))
                from ccgeo.fields import bracket

                br = 0.1 ** (li + lj) * bracket(Yi, Yj, y)
                assert np.linalg.norm(br - G @ direct[i, j]) <= 1e-6 * max(1.0, np.linalg.norm(G))


def test_a_ode_basic(bases):
    b, I, x = _setup(bases, "euclid2in3")
    ray = PB.solve_A_ode(b, I, x, 0.1, [0.6, 0.8], 0.5, radii=[0.0, 0.25, 0.5])
    assert np.all(ray.A == 0)
    h, Ih, xh = _setup(bases, "heisenberg")
    pf = PB.PullbackFrame(h, Ih, xh, 0.1)
    om = np.array([1.0, 1.0, 1.0]) / np.sqrt(3)
    rhos = np.array([0.01, 0.02, 0.04, 0.08])
    norms = [np.linalg.norm(pf.A(r * om)) for r in rhos]
    assert np.all(pf.A(np.zeros(3)) == 0)
    # A = O(rho) near the origin
    slope = np.polyfit(np.log(rhos), np.log(norms), 1)[0]
    assert 0.8 <= slope <= 1.2
    for r in (0.1, 0.3):
        assert pf.pushforward_errors(r * om).max() <= 1e-4
        np.testing.assert_allclose(pf.A(r * om), pf.A_hat(r * om), atol=1e-3)


def test_a_ode_blowup(bases):
    from ccgeo.errors import RadiusTooLarge

    b, I, x = _setup(bases, "heisenberg", 1.0)
    with pytest.raises((RadiusTooLarge, Exception)):
        PB.solve_A_ode(b, I, x, 1.0, [0.0, 0.0, 1.0], 50.0)


def test_psi(bases, rng):
    e, Ie, xe = _setup(bases, "euclid2in3")
    np.testing.assert_allclose(PB.map_Psi(e, Ie, xe, 0.1, [0.1, 0.2], [0.3, -0.1]), [0.4, 0.1], atol=1e-12)
    h, Ih, xh = _setup(bases, "heisenberg")
    u1 = np.array([0.05, -0.1, 0.02])
    np.testing.assert_allclose(PB.map_Psi(h, Ih, xh, 0.1, u1, np.zeros(3)), u1)


def test_psi_numpy_twin_agrees(bases):
    h, Ih, xh = _setup(bases, "martinet")
    pf = PB.PullbackFrame(h, Ih, xh, 0.1)
    omega = np.array([0.3, -0.4, 0.5])
    omega /= np.linalg.norm(omega)
    A1, *_ = pf._ray(omega, 0.3)
    A2, *_ = pf._ray_python(omega, 0.3, pf.ray_steps)
    np.testing.assert_allclose(A1, A2, atol=1e-10)


def test_lift_zero_and_single_field(bases):
    b, I, x = _setup(bases, "heisenberg")
    zero = MT.ControlPath(np.zeros((2, b.q)), [0.5, 0.5], "rho", 0.05)
    out = PB.lift_path(b, I, x, 0.1, zero)
    assert np.all(out.thetas == 0)
    c = np.zeros((1, b.q))
    c[0, I.zero_based[0]] = 1.0
    path = MT.ControlPath(c, [1.0], "rho", 0.03)
    out = PB.lift_path(b, I, x, 0.1, path)
    np.testing.assert_allclose(out.thetas[:, 1:], 0, atol=1e-6)
    np.testing.assert_allclose(out.endpoint, [0.3, 0, 0], atol=1e-6)


def test_lift_tracks_random_paths(bases):
    b, I, x = _setup(bases, "heisenberg")
    # constant fitted for eps/2 on one sample, checked on 100 held-out paths
    c, *_ = MT.inner_constant(b, I, x, 0.1, 0.15, N=100, seed=3)
    cloud = MT.sample_ball(b, x, 0.8 * c * 0.15**2 * 0.1, "rho", 100, 5)
    for p in cloud.paths:
        out = PB.lift_path(b, I, x, 0.1, p, eps=0.3)
        assert out.ok and out.max_residual <= 1e-6 * 0.1
        assert out.max_box_norm <= 0.15
    # orbit confinement of lifts
    e, Ie, xe = _setup(bases, "euclid2in3")
    for p in MT.sample_ball(e, [0, 0, 0.7], 0.1, "cc", 5, 1).paths:
        out = PB.lift_path(e, Ie, np.array([0, 0, 0.7]), 0.1, p)
        pts, _ = FL.EMap(e, Ie, np.array([0, 0, 0.7]), 0.1).batch(out.thetas)
        assert np.abs(pts[:, 2] - 0.7).max() <= 1e-8


def test_lift_phi_through_e(bases):
    e, Ie, xe = _setup(bases, "euclid2in3")
    grid = PB.euclid_grid(2, 0.4, 5)
    rep = PB.lift_Phi_through_E(e, Ie, xe, 0.1, 0.4, grid)
    np.testing.assert_allclose(rep.theta, grid, atol=1e-8)
    h, Ih, xh = _setup(bases, "heisenberg")
    grid = PB.euclid_grid(3, 0.2, 3)
    rep = PB.lift_Phi_through_E(h, Ih, xh, 0.1, 0.2, grid)
    assert rep.max_dev <= 0.5 and rep.max_residual <= 1e-6
    assert np.all(rep.theta[~np.any(grid, axis=1)] == 0)
    with pytest.raises(ValueError):
        PB.lift_Phi_through_E(h, Ih, xh, 0.1, 0.1, [[0.2, 0, 0]])


def test_injectivity(bases):
    e, Ie, xe = _setup(bases, "euclid2in3")
    assert PB.injectivity_check_E(e, Ie, xe, 0.1, 0.5).injective
    h, Ih, xh = _setup(bases, "heisenberg")
    eta3 = PB.calibrate_eta3(h, Ih, xh, 0.1)
    assert PB.injectivity_check_E(h, Ih, xh, 0.1, eta3 / 2, 9).injective
    # a single length-1 factor gives a monotone curve
    I1 = ml.TupleIndex.from_basis(h, (1,))
    E = FL.EMap(h, I1, xh, 0.1)
    pts, _ = E.batch(np.linspace(-1, 1, 21)[:, None])
    assert np.all(np.diff(pts[:, 0]) > 0)


def test_injectivity_threshold_on_a_line():
    # E(h) = 0.1 h: neighbours sit exactly at spacing * sigma_min, so any kappa > 1 flags a collision
    from ccgeo import fields as F

    fam = F.family_from_dict({"dim": 1, "step": 1, "fields": [{"coeffs": ["1"]}], "domain_box": [[-5, 5]]})
    b = F.generate_commutators(fam)
    rep = PB.injectivity_check_E(b, ml.TupleIndex.from_basis(b, (1,)), np.zeros(1), 0.1, 0.5, 9)
    assert rep.injective and rep.min_distance == pytest.approx(0.1 * 0.125)
    with pytest.raises(NotInjective):
        PB.injectivity_check_E(b, ml.TupleIndex.from_basis(b, (1,)), np.zeros(1), 0.1, 0.5, 9, kappa=2.0)


def test_neumann_examples():
    assert PB.neumann_bound_check(np.zeros((2, 2)), np.zeros((2, 2))).lhs == 0
    v = PB.neumann_bound_check(0.1 * np.eye(2), np.zeros((2, 2)))
    assert v.lhs == pytest.approx(1 - 1 / 1.1) and v.rhs == pytest.approx(0.2) and v.holds
    with pytest.raises(ValueError):
        PB.neumann_bound_check(0.6 * np.eye(2), np.zeros((2, 2)))
    rng = np.random.default_rng(0)
    for _ in range(1000):
        chi = rng.standard_normal((3, 3))
        chi *= 0.4 / np.linalg.norm(chi, 2)
        b = rng.standard_normal((3, 3))
        b *= 0.3 / np.linalg.norm(b, 2)
        assert PB.neumann_bound_check(chi, b).holds


def test_calibrations(bases):
    b, I, x = _setup(bases, "heisenberg")
    fe = PB.FrameExpansion(FL.EMap(b, I, x, 0.1))
    eps0 = PB.calibrate_eps0(fe)
    assert eps0 in PB.LADDER
    assert all(fe.evaluate(h).norm <= 0.25 for h in FL.box_grid(fe.emap.ell, eps0, 5))
    assert PB.largest_passing([0.1, 0.5, 0.3], lambda v: v < 0.4) == 0.3
    assert PB.largest_passing([0.5], lambda v: False) is None
