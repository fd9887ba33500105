"""First-order frames of ``E`` and ``Phi``: the chi-matrix, rescaled structure
constants, the radial ODE for ``A``, the map ``Psi`` and path lifting."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from . import kernels as K
from . import multilinear as ml
from .errors import (
    DegenerateTuple,
    EscapedDomain,
    FrameCollapse,
    LiftDiverged,
    NotInjective,
    RadiusTooLarge,
)
from .fields import bracket, scaled_structure_constants, structure_constants
from .flows import DEFAULT_CFG, JACOBIAN_STEP, EMap, IntegratorConfig, PhiMap, box_grid, box_norm
from .polynomial import pack_fields

A_BLOWUP = 10.0
RAY_STEPS = 48
PSI_STEPS = 8


def scaled_tuple_frame(basis, I, y, r):
    """``n x p`` matrix with columns ``r^{l_ij} Y_ij(y)``."""
    ell = I.lengths(basis).astype(float)
    return np.stack([r**l * basis.members[i](y) for i, l in zip(I.zero_based, ell)], axis=1)


# -- chi ------------------------------------------------------------------------------


@dataclass
class ChiResult:
    chi: np.ndarray
    residual: float  # relative frame-reconstruction error
    dE: np.ndarray
    point: np.ndarray

    @property
    def norm(self):
        return float(np.linalg.norm(self.chi, 2))


@dataclass(frozen=True, eq=False)
class FrameExpansion:
    """``dE(h) = [Y~_I(E(h))] (I_p + chi(h))`` evaluated numerically."""

    emap: EMap

    @property
    def tuple(self):
        return self.emap.tuple

    @property
    def base(self):
        return self.emap.x

    @property
    def radius(self):
        return self.emap.r

    def evaluate(self, h, step: float = JACOBIAN_STEP) -> ChiResult:
        E = self.emap
        h = np.asarray(h, dtype=float)
        y = E(h)
        dE = E.jacobian(h, step)
        G = scaled_tuple_frame(E.basis, E.tuple, y, E.r)
        if ml.wedge_norm(G) <= ml.DEFAULT_RANK_TOL * max(np.prod(np.linalg.norm(G, axis=0)), 1e-300):
            raise FrameCollapse(f"scaled frame degenerates at E(h)={y.tolist()}")
        try:
            Xi = np.stack([ml.cramer_solve(G, dE[:, k]) for k in range(E.p)], axis=1)
        except DegenerateTuple as exc:
            raise FrameCollapse(str(exc)) from None
        res = np.linalg.norm(dE - G @ Xi) / max(np.linalg.norm(dE), 1e-300)
        return ChiResult(Xi - np.eye(E.p), float(res), dE, y)

    def chi(self, h):
        return self.evaluate(h).chi

    def residual(self, h):
        return self.evaluate(h).residual


def chi_matrix(basis, I, x, r, h, cfg: IntegratorConfig = DEFAULT_CFG) -> ChiResult:
    return FrameExpansion(EMap(basis, I, x, r, cfg)).evaluate(h)


@dataclass
class ChiFit:
    C: float
    slope: float
    chi0: float
    max_residual: float
    max_chi: float
    eps: float


def fit_chi_bound(fe: FrameExpansion, eps: float, density: int = 7) -> ChiFit:
    """Least-squares ``C`` in ``|chi(h)| <= C |h|_I`` over a ``density^p`` grid,
    plus the log-log slope of the per-shell envelope."""
    ell = fe.emap.ell
    grid = box_grid(ell, eps, density)
    norms, chis, res = [], [], []
    for h in grid:
        out = fe.evaluate(h)
        norms.append(box_norm(h, ell))
        chis.append(out.norm)
        res.append(out.residual)
    norms, chis = np.array(norms), np.array(chis)
    chi0 = fe.evaluate(np.zeros(fe.emap.p)).norm
    nz = norms > 0
    C = float(np.sum(chis[nz] * norms[nz]) / np.sum(norms[nz] ** 2)) if nz.any() else 0.0
    levels = np.unique(np.round(norms[nz], 12))
    env = np.array([chis[nz][np.isclose(norms[nz], lv)].max() for lv in levels])
    keep = env > 1e-9
    if keep.sum() >= 2:
        slope = float(np.polyfit(np.log(levels[keep]), np.log(env[keep]), 1)[0])
    else:
        slope = float("inf")  # chi vanishes identically
    return ChiFit(C, slope, chi0, float(max(res)), float(chis.max()), eps)


# -- rescaled structure constants --------------------------------------------------------


def rescaled_constants(basis, I, r, y, rank_tol: float = ml.DEFAULT_RANK_TOL):
    """``c~[a, b, k]``: coordinates of ``[Y~_a, Y~_b](y)`` in the frame ``Y~_I(y)``,
    assembled from the scaled constants ``hat c`` and the Cramer coordinates of
    every ``Y~_l`` in ``Y~_I``.  Returns ``(c_tilde, residual)``."""
    y = np.asarray(y, dtype=float)
    sc = structure_constants(basis, y, rank_tol)
    chat = scaled_structure_constants(basis, sc.c, r)
    G = scaled_tuple_frame(basis, I, y, r)
    scale = r ** basis.lengths.astype(float)
    Xi = np.stack([ml.cramer_solve(G, scale[l] * basis.members[l](y)) for l in range(basis.q)])
    ct = np.einsum("abl,lk->abk", chat, Xi)
    res = 0.0
    for a in range(basis.q):
        for b in range(a + 1, basis.q):
            B = scale[a] * scale[b] * bracket(basis.members[a], basis.members[b], y)
            res = max(res, float(np.linalg.norm(B - G @ ct[a, b])))
    return ct, res


def rescaled_constants_direct(basis, I, r, y, members=None):
    """Same quantity by Cramer's rule applied straight to the scaled brackets."""
    y = np.asarray(y, dtype=float)
    idx = list(range(basis.q)) if members is None else list(members)
    G = scaled_tuple_frame(basis, I, y, r)
    scale = r ** basis.lengths.astype(float)
    out = np.zeros((len(idx), len(idx), I.p))
    for u, a in enumerate(idx):
        for v, b in enumerate(idx):
            if a == b:
                continue
            B = scale[a] * scale[b] * bracket(basis.members[a], basis.members[b], y)
            out[u, v] = ml.cramer_solve(G, B)
    return out


@dataclass
class ConstantsReport:
    sup_c: float
    sup_dc: float
    max_residual: float
    maximality_violations: list = field(default_factory=list)


def rescaled_constants_on_ball(basis, I, x0, r, sample, delta: float = 1e-4, eta: float = 0.25, cfg=DEFAULT_CFG):
    """Sup of ``|c~|`` and of its derivatives along the ``Y~`` flows over
    ``sample``; warns at points where ``(I, y, r)`` stops being ``eta``-maximal."""
    from .flows import flow

    I = I if isinstance(I, ml.TupleIndex) else ml.TupleIndex.from_basis(basis, I)
    fam = basis.family
    scale = r ** basis.lengths.astype(float)
    sup_c, sup_dc, worst = 0.0, 0.0, 0.0
    bad = []
    for y in np.atleast_2d(sample):
        ct, res = rescaled_constants(basis, I, r, y)
        sup_c = max(sup_c, float(np.max(np.abs(ct))))
        worst = max(worst, res / max(1.0, np.linalg.norm(scaled_tuple_frame(basis, I, y, r))))
        if not ml.is_eta_maximal(basis, I, y, r, eta):
            bad.append(np.asarray(y).tolist())
        for l, Y in enumerate(basis.members):
            if not np.any(Y(y)):
                continue
            yp = flow(Y, y, scale[l] * delta, cfg, fam)
            ym = flow(Y, y, -scale[l] * delta, cfg, fam)
            d = (rescaled_constants(basis, I, r, yp)[0] - rescaled_constants(basis, I, r, ym)[0]) / (2 * delta)
            sup_dc = max(sup_dc, float(np.max(np.abs(d))))
    if bad:
        warnings.warn(f"(I, y, r) is not {eta}-maximal at {len(bad)} sample points, e.g. {bad[0]}")
    return (lambda y: rescaled_constants(basis, I, r, y)[0]), ConstantsReport(sup_c, sup_dc, worst, bad)


# -- A-ODE, Z fields and Psi -------------------------------------------------------------


@dataclass
class ARay:
    omega: np.ndarray
    rhos: np.ndarray
    A: np.ndarray  # (k, p, p)
    points: np.ndarray  # Phi(rho omega)


@dataclass(frozen=True, eq=False)
class PullbackFrame:
    """``Z_j = d_j + sum_k A_jk(u) d_k`` with ``A`` from the radial ODE."""

    basis: object
    tuple: ml.TupleIndex
    x: np.ndarray
    r: float
    cfg: IntegratorConfig = DEFAULT_CFG
    ray_steps: int = RAY_STEPS

    def __post_init__(self):
        if not isinstance(self.tuple, ml.TupleIndex):
            object.__setattr__(self, "tuple", ml.TupleIndex.from_basis(self.basis, self.tuple))
        object.__setattr__(self, "x", np.ascontiguousarray(self.x, dtype=float))

    @property
    def p(self):
        return self.tuple.p

    @cached_property
    def phi(self):
        return PhiMap(self.basis, self.tuple, self.x, self.r, self.cfg)

    @cached_property
    def _packs(self):
        idx = self.tuple.zero_based
        members = [self.basis.members[i] for i in idx]
        if any(Y.poly is None for Y in members):
            return None
        sc = [self.r ** float(self.basis.lengths[i]) for i in idx]
        ytil = [Y.poly.scale(s) for Y, s in zip(members, sc)]
        brs = [ytil[a].bracket(ytil[b]) for a in range(self.p) for b in range(self.p)]
        return pack_fields(ytil), pack_fields(brs)

    def _bounds(self):
        fam = self.basis.family
        return fam.lo, fam.hi

    def _raise(self, status, rho, point=None):
        if status == K.DIVERGED:
            raise RadiusTooLarge(float(rho))
        if status == K.ESCAPED:
            raise EscapedDomain(float(rho), point)

    def _ray_python(self, omega, rho, nsteps):
        """RK4 twin of :func:`kernels.a_ray` for non-polynomial families."""
        idx = self.tuple.zero_based
        p = self.p
        lo, hi = self._bounds()

        def rhs(s, y, M):
            G = scaled_tuple_frame(self.basis, self.tuple, y, self.r)
            ct = rescaled_constants_direct(self.basis, self.tuple, self.r, y, idx)
            Km = np.einsum("b,abk->ak", omega, ct)
            dy = G @ omega
            if s == 0.0:
                return dy, np.zeros((p, p))
            A = M / s
            return dy, -(A @ A + Km @ M + s * Km)

        y, M = self.x.copy(), np.zeros((p, p))
        h = rho / nsteps
        s = 0.0
        for it in range(nsteps):
            k1 = rhs(s, y, M)
            k2 = rhs(s + h / 2, y + h / 2 * k1[0], M + h / 2 * k1[1])
            k3 = rhs(s + h / 2, y + h / 2 * k2[0], M + h / 2 * k2[1])
            k4 = rhs(s + h, y + h * k3[0], M + h * k3[1])
            y = y + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            M = M + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            s = (it + 1) * h
            if np.any(y < lo) or np.any(y > hi):
                return M / s, y, K.ESCAPED, s
            if np.max(np.abs(M)) > A_BLOWUP * s:
                return M / s, y, K.DIVERGED, s
        return M / rho, y, K.OK, rho

    def _ray(self, omega, rho):
        omega = np.ascontiguousarray(omega, dtype=float)
        if self._packs is None:
            return self._ray_python(omega, rho, self.ray_steps)
        lo, hi = self._bounds()
        return K.a_ray(omega, float(rho), self.ray_steps, self.x, *self._packs[0], *self._packs[1], lo, hi, A_BLOWUP)

    def A(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        rho = float(np.linalg.norm(u))
        if rho == 0.0:
            return np.zeros((self.p, self.p))
        A, y, st, reached = self._ray(u / rho, rho)
        self._raise(st, reached, y)
        return A

    def Z(self, u) -> np.ndarray:
        """Rows ``Z_j(u)`` in ``u``-coordinates."""
        return np.eye(self.p) + self.A(u)

    def C_matrix(self, u) -> np.ndarray:
        """``C(u)_{ik} = sum_j u_j c~_{i_i i_j}^k(Phi(u))``."""
        u = np.asarray(u, dtype=float)
        y = self.phi(u)
        ct = rescaled_constants_direct(self.basis, self.tuple, self.r, y, self.tuple.zero_based)
        return np.einsum("b,abk->ak", u, ct)

    def A_hat(self, u, step: float = 1e-6) -> np.ndarray:
        """Direct pullback: rows solve ``dPhi(u) z_j = Y~_ij(Phi(u))``."""
        u = np.asarray(u, dtype=float)
        dP = self.phi.jacobian(u, step)
        G = scaled_tuple_frame(self.basis, self.tuple, self.phi(u), self.r)
        Z = np.stack([ml.cramer_solve(dP, G[:, j]) for j in range(self.p)])
        return Z - np.eye(self.p)

    def pushforward_errors(self, u, step: float = 1e-6) -> np.ndarray:
        """``|dPhi(u) Z_j - Y~_ij(Phi(u))| / |Y~_ij(Phi(u))|`` for every ``j``."""
        u = np.asarray(u, dtype=float)
        dP = self.phi.jacobian(u, step)
        G = scaled_tuple_frame(self.basis, self.tuple, self.phi(u), self.r)
        Z = self.Z(u)
        return np.array([np.linalg.norm(dP @ Z[j] - G[:, j]) / max(np.linalg.norm(G[:, j]), 1e-300) for j in range(self.p)])

    def psi(self, u1, v, steps: int = PSI_STEPS) -> np.ndarray:
        """Time-1 flow of ``sum_j v_j Z_j`` from ``u1`` (``u``-coordinates)."""
        u1 = np.ascontiguousarray(u1, dtype=float)
        v = np.ascontiguousarray(v, dtype=float)
        if self._packs is not None:
            lo, hi = self._bounds()
            u, st, rho = K.psi_flow(u1, v, steps, self.ray_steps, self.x, *self._packs[0], *self._packs[1], lo, hi, A_BLOWUP)
            self._raise(st, rho)
            return u
        u = u1.copy()
        h = 1.0 / steps
        f = lambda z: v + self.A(z).T @ v
        for _ in range(steps):
            k1 = f(u)
            k2 = f(u + h / 2 * k1)
            k3 = f(u + h / 2 * k2)
            k4 = f(u + h * k3)
            u = u + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        return u


def solve_A_ode(basis, I, x, r, omega, rho_max, cfg: IntegratorConfig = DEFAULT_CFG, radii=None) -> ARay:
    """``A(rho omega)`` at ``radii`` (default: ``rho_max`` only)."""
    omega = np.asarray(omega, dtype=float)
    if not np.isclose(np.linalg.norm(omega), 1.0):
        raise ValueError("omega must be a unit vector")
    pf = PullbackFrame(basis, I, x, r, cfg)
    rhos = np.array([rho_max] if radii is None else radii, dtype=float)
    As, pts = [], []
    for rho in rhos:
        if rho == 0.0:
            As.append(np.zeros((pf.p, pf.p)))
            pts.append(pf.x.copy())
            continue
        A, y, st, reached = pf._ray(omega, rho)
        pf._raise(st, reached, y)
        As.append(A)
        pts.append(y)
    return ARay(omega, rhos, np.array(As), np.array(pts))


def map_Psi(basis, I, x, r, u1, v, cfg: IntegratorConfig = DEFAULT_CFG):
    return PullbackFrame(basis, I, x, r, cfg).psi(u1, v)


# -- lifting ------------------------------------------------------------------------------


@dataclass
class LiftResult:
    thetas: np.ndarray
    residuals: np.ndarray
    path: np.ndarray
    ok: bool
    status: int
    failed_index: int
    max_box_norm: float

    @property
    def endpoint(self):
        return self.thetas[-1]

    @property
    def max_residual(self):
        return float(np.max(self.residuals)) if self.residuals.size else 0.0


def lift_checkpoints(emap: EMap, G, theta0=None, tol=None, max_newton: int = 12, rank_tol: float = 1e-10, raise_on_fail=True) -> LiftResult:
    """Lift a sampled path ``G[0] = x, G[1], ...`` through ``E`` by continuation."""
    G = np.ascontiguousarray(G, dtype=float)
    if theta0 is None:
        theta0 = np.zeros(emap.p)
    if tol is None:
        tol = max(1e-7 * emap.r, 1e-13)
    fam = emap.fam
    if emap.compiled:
        thetas, res, st, k = K.lift_track(
            G, np.ascontiguousarray(theta0, dtype=float), JACOBIAN_STEP, tol, max_newton, rank_tol,
            emap.x, float(emap.r), emap.ell, *emap.tables, *fam.packed, fam.m, fam.lo, fam.hi, *emap.cfg.args,
        )
    else:
        thetas, res, st, k = _lift_python(emap, G, theta0, tol, max_newton, rank_tol)
    ok = st == K.OK
    bn = max((box_norm(t, emap.ell) for t in thetas), default=0.0)
    out = LiftResult(thetas, res, G, ok, int(st), int(k), float(bn))
    if not ok and raise_on_fail:
        tfrac = k / max(len(G) - 1, 1)
        if st == K.COLLAPSED:
            raise FrameCollapse(f"dE lost rank while lifting at t={tfrac:.4f}")
        if st == K.ESCAPED:
            raise EscapedDomain(tfrac)
        raise LiftDiverged(tfrac)
    return out


def _lift_python(emap, G, theta0, tol, max_newton, rank_tol):
    thetas = [np.asarray(theta0, dtype=float)]
    res = [0.0]
    theta = thetas[0].copy()
    for k in range(1, len(G)):
        try:
            J = emap.jacobian(theta)
            theta = theta + np.linalg.lstsq(J, G[k] - G[k - 1], rcond=None)[0]
            for it in range(max_newton):
                r = G[k] - emap(theta)
                rn = np.linalg.norm(r)
                if rn <= tol:
                    break
                if it:
                    J = emap.jacobian(theta)
                theta = theta + np.linalg.lstsq(J, r, rcond=None)[0]
            else:
                return np.array(thetas), np.array(res), K.DIVERGED, k
        except EscapedDomain:
            return np.array(thetas), np.array(res), K.ESCAPED, k
        thetas.append(theta.copy())
        res.append(rn)
    return np.array(thetas), np.array(res), K.OK, -1


def lift_path(basis, I, x, r, controls, eps=None, cfg: IntegratorConfig = DEFAULT_CFG, substeps: int = 8, raise_on_fail=True) -> LiftResult:
    """Lift the path driven by ``controls`` (a :class:`metrics.ControlPath`)."""
    emap = EMap(basis, I, x, r, cfg)
    G = controls.checkpoints(basis, x, substeps, cfg)
    out = lift_checkpoints(emap, G, raise_on_fail=raise_on_fail)
    if eps is not None:
        out.within_eps = out.ok and out.max_box_norm < eps
    return out


@dataclass
class PhiLiftReport:
    u: np.ndarray
    theta: np.ndarray
    dtheta_dev: np.ndarray  # |d theta(u) - I| per grid point
    residual: np.ndarray  # |E(theta(u)) - Phi(u)|
    ok: np.ndarray

    @property
    def max_dev(self):
        return float(np.max(self.dtheta_dev)) if self.dtheta_dev.size else 0.0

    @property
    def max_residual(self):
        return float(np.max(self.residual)) if self.residual.size else 0.0


def lift_Phi_through_E(basis, I, x, r, eta3, grid, cfg: IntegratorConfig = DEFAULT_CFG, points: int = 32) -> PhiLiftReport:
    """Solve ``E(theta(u)) = Phi(u)`` along the rays ``t u`` and report
    ``|d theta - I|`` with ``d theta = dE(theta)^+ dPhi(u)``."""
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    if np.any(np.linalg.norm(grid, axis=1) > eta3 * (1 + 1e-12)):
        raise ValueError("grid must lie in the closed Euclidean ball of radius eta3")
    emap = EMap(basis, I, x, r, cfg)
    phi = PhiMap(basis, emap.tuple, x, r, cfg)
    p = emap.p
    thetas = np.zeros_like(grid)
    dev = np.zeros(len(grid))
    res = np.zeros(len(grid))
    ok = np.ones(len(grid), dtype=bool)
    for g, u in enumerate(grid):
        if not np.any(u):
            continue
        out = lift_checkpoints(emap, phi.ray(u, points), raise_on_fail=True)
        th = out.endpoint
        thetas[g] = th
        res[g] = np.linalg.norm(emap(th) - phi(u))
        dth = np.linalg.lstsq(emap.jacobian(th), phi.jacobian(u), rcond=None)[0]
        dev[g] = np.linalg.norm(dth - np.eye(p), 2)
    # the origin: theta = 0 and d theta(0) = dE(0)^+ dPhi(0)
    for g in np.flatnonzero(~np.any(grid, axis=1)):
        dth = np.linalg.lstsq(emap.jacobian(np.zeros(p)), phi.jacobian(np.zeros(p)), rcond=None)[0]
        dev[g] = np.linalg.norm(dth - np.eye(p), 2)
    return PhiLiftReport(grid, thetas, dev, res, ok)


# -- injectivity and Neumann ------------------------------------------------------------


@dataclass
class InjectivityReport:
    injective: bool
    min_distance: float
    threshold: float
    spacing: float
    sigma_min: float
    pair: tuple
    grid_size: int

    def to_dict(self):
        return {
            "injective": self.injective,
            "min_distance": self.min_distance,
            "threshold": self.threshold,
            "spacing": self.spacing,
            "sigma_min": self.sigma_min,
            "pair": [list(map(float, v)) for v in self.pair],
            "grid_size": self.grid_size,
        }


def injectivity_check_E(basis, I, x, r, eps1, grid_density: int = 9, cfg: IntegratorConfig = DEFAULT_CFG, kappa: float = 0.1, raise_on_collision=True) -> InjectivityReport:
    """Nearest-neighbour separation of ``E`` on a ``grid_density^p`` grid of
    ``Q_I(eps1)`` against ``kappa * spacing * min sigma_min(dE)``."""
    emap = EMap(basis, I, x, r, cfg)
    grid = box_grid(emap.ell, eps1, grid_density)
    pts, st = emap.batch(grid)
    if np.any(st != K.OK):
        raise EscapedDomain(float("nan"), grid[np.flatnonzero(st)[0]])
    J, st = emap.jacobian_batch(grid)
    sig = float(np.min(np.linalg.svd(J, compute_uv=False)[:, -1]))
    spacing = float(min(2 * eps1 ** float(l) / (grid_density - 1) for l in emap.ell))
    d, nn = cKDTree(pts).query(pts, k=2)
    i = int(np.argmin(d[:, 1]))
    j = int(nn[i, 1])
    dmin = float(d[i, 1])
    thr = kappa * spacing * sig
    rep = InjectivityReport(bool(dmin >= thr), dmin, thr, spacing, sig, (grid[i], grid[j]), len(grid))
    if not rep.injective and raise_on_collision:
        raise NotInjective((grid[i].tolist(), grid[j].tolist()), dmin)
    return rep


@dataclass
class NeumannVerdict:
    lhs: float
    rhs: float

    @property
    def holds(self):
        return self.lhs <= self.rhs * (1 + 1e-12) + 1e-15


def neumann_bound_check(chi, b) -> NeumannVerdict:
    """``|(I + chi)^-1 (I + b) - I| <= 2 (|chi| + |b|)`` in the operator norm."""
    chi = np.atleast_2d(np.asarray(chi, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if chi.shape != b.shape or chi.shape[0] != chi.shape[1]:
        raise ValueError("chi and b must be square matrices of the same size")
    nc = np.linalg.norm(chi, 2)
    if nc > 0.5:
        raise ValueError(f"|chi| = {nc:.4g} exceeds 1/2")
    p = chi.shape[0]
    lhs = np.linalg.norm(np.linalg.solve(np.eye(p) + chi, np.eye(p) + b) - np.eye(p), 2)
    return NeumannVerdict(float(lhs), float(2 * (nc + np.linalg.norm(b, 2))))


# -- empirical constants --------------------------------------------------------------------


def largest_passing(candidates, predicate):
    """First candidate (scanning in decreasing order) satisfying ``predicate``."""
    for c in sorted(candidates, reverse=True):
        try:
            if predicate(c):
                return float(c)
        except (EscapedDomain, FrameCollapse, RadiusTooLarge, LiftDiverged):
            continue
    return None


LADDER = tuple(0.8 * 0.75**k for k in range(14))


def calibrate_eps0(fe: FrameExpansion, density: int = 5, bound: float = 0.25, ladder=LADDER):
    """Largest ``eps`` with ``|chi| <= bound`` on a ``density^p`` grid of ``Q_I(eps)``."""

    def ok(eps):
        return all(fe.evaluate(h).norm <= bound for h in box_grid(fe.emap.ell, eps, density))

    return largest_passing(ladder, ok)


def ball_sample(p, radius, count, rng):
    """Uniform points of the closed Euclidean ``p``-ball."""
    d = rng.standard_normal((count, p))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * radius * rng.random(count)[:, None] ** (1.0 / p)


def calibrate_eta2(pf: PullbackFrame, count: int = 24, bound: float = 0.25, seed: int = 0, ladder=LADDER):
    """Largest ``eta`` with ``|A(u)| <= bound`` at sampled ``u`` of the ``2 eta``
    ball (``Psi`` flows from ``|u1| <= eta`` for unit time at speed ``<= eta``)."""

    def ok(eta):
        rng = np.random.default_rng(seed)
        us = ball_sample(pf.p, 2 * eta, count, rng)
        return all(np.linalg.norm(pf.A(u), 2) <= bound for u in us)

    return largest_passing(ladder, ok)


def calibrate_eta3(basis, I, x, r, cfg=DEFAULT_CFG, density: int = 3, bound: float = 0.5, ladder=LADDER):
    """Largest ``eta`` with ``|d theta - I| <= bound`` on a coarse grid of ``B_Euc(eta)``."""
    p = I.p

    def ok(eta):
        grid = euclid_grid(p, eta, density)
        rep = lift_Phi_through_E(basis, I, x, r, eta, grid, cfg)
        return rep.max_dev <= bound

    return largest_passing(ladder, ok)


def euclid_grid(p, radius, density):
    """Cube grid clipped to the closed Euclidean ball of ``radius``."""
    axes = np.linspace(-radius, radius, density)
    mesh = np.stack([m.ravel() for m in np.meshgrid(*([axes] * p), indexing="ij")], axis=1)
    return mesh[np.linalg.norm(mesh, axis=1) <= radius * (1 + 1e-12)]
