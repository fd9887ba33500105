"""Control distances ``d_cc`` and ``rho`` by direct shooting over
piecewise-constant controls, control-ball sampling and ball-box verdicts.

A path at radius ``r`` flows, on segment ``s``, the field
``sum_j b_sj r^{e_j} F_j`` for time ``durations[s]`` with ``|b_s| <= 1``.  For
``cc`` the ``F_j`` are the horizontal fields and ``e_j = 1``; for ``rho`` they
are all commutators with ``e_j = l_j``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares, minimize

from . import kernels as K
from .errors import EscapedDomain
from .flows import DEFAULT_CFG, EMap, IntegratorConfig, PhiMap, box_grid, run_schedule
from .pullback import lift_checkpoints

METRICS = ("cc", "rho")
SEGMENTS = 8
REACH_TOL = 1e-6
CEM_POPULATION, CEM_ITERS, CEM_ELITE = 64, 40, 8


def _generators(basis, metric):
    """``(fields, packed, exponents)`` of the admissible generators."""
    if metric == "cc":
        fam = basis.family
        return fam.horizontal, fam.packed, np.ones(fam.m)
    if metric == "rho":
        return basis.members, basis.packed, basis.lengths.astype(float)
    raise ValueError(f"metric must be one of {METRICS}, got {metric!r}")


@dataclass
class ControlPath:
    coeffs: np.ndarray  # (S, F), rows in the closed unit ball
    durations: np.ndarray  # (S,), positive, summing to 1
    metric: str
    radius: float

    def __post_init__(self):
        self.coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        self.durations = np.asarray(self.durations, dtype=float).ravel()
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        if self.coeffs.shape[0] != self.durations.size:
            raise ValueError("one duration per segment is required")
        if np.any(self.durations <= 0) or not np.isclose(self.durations.sum(), 1.0, atol=1e-9):
            raise ValueError("durations must be positive and sum to 1")
        if np.any(np.linalg.norm(self.coeffs, axis=1) > 1 + 1e-9):
            raise ValueError("segment coefficients must satisfy |b| <= 1")
        if self.radius < 0:
            raise ValueError("radius must be non-negative")

    @property
    def degree_weights(self):
        return self.metric == "rho"

    def weights(self, basis):
        _, _, expo = _generators(basis, self.metric)
        return self.coeffs * float(self.radius) ** expo

    def rescaled(self, radius):
        return ControlPath(self.coeffs, self.durations, self.metric, radius)

    def endpoint(self, basis, x, cfg: IntegratorConfig = DEFAULT_CFG):
        fields, packed, _ = _generators(basis, self.metric)
        fam = basis.family
        return run_schedule(fields, packed, self.weights(basis), self.durations, x, fam.lo, fam.hi, cfg)

    def checkpoints(self, basis, x, substeps: int = 8, cfg: IntegratorConfig = DEFAULT_CFG):
        fields, packed, _ = _generators(basis, self.metric)
        fam = basis.family
        x = np.ascontiguousarray(x, dtype=float)
        W = np.ascontiguousarray(self.weights(basis))
        if packed is not None:
            pts, status = K.path_checkpoints(*packed, W, self.durations, substeps, x, fam.lo, fam.hi, *cfg.args)
            if status != K.OK:
                raise EscapedDomain(float("nan"), pts[-1])
            return pts
        out = [x]
        for w, d in zip(W, self.durations):
            for _ in range(substeps):
                out.append(run_schedule(fields, None, w[None, :], np.array([d / substeps]), out[-1], fam.lo, fam.hi, cfg))
        return np.array(out)

    def digest(self):
        h = hashlib.sha1(self.coeffs.tobytes() + self.durations.tobytes() + self.metric.encode())
        return h.hexdigest()[:16]

    def to_dict(self):
        return {"coeffs": self.coeffs.tolist(), "durations": self.durations.tolist(), "metric": self.metric, "radius": self.radius}


# -- shooting -------------------------------------------------------------------------


class _Shooter:
    """Endpoint map ``z = (b, log r) -> gamma(1)`` with fixed durations."""

    def __init__(self, basis, metric, durations, x, cfg):
        self.fields, self.packed, self.expo = _generators(basis, metric)
        fam = basis.family
        self.lo, self.hi = fam.lo, fam.hi
        self.D = np.ascontiguousarray(durations, dtype=float)
        self.S, self.F = self.D.size, len(self.fields)
        self.x = np.ascontiguousarray(x, dtype=float)
        self.cfg = cfg
        self.evals = 0

    def _W(self, z):
        b = z[:-1].reshape(self.S, self.F)
        return b * np.exp(np.clip(z[-1], -50.0, 50.0) * self.expo)

    def _W_batch(self, Z):
        B = Z[:, :-1].reshape(len(Z), self.S, self.F)
        return B * np.exp(np.clip(Z[:, -1], -50.0, 50.0)[:, None, None] * self.expo)

    def endpoints(self, Z):
        Z = np.atleast_2d(Z)
        self.evals += len(Z)
        W = np.ascontiguousarray(self._W_batch(Z))
        if self.packed is not None:
            D = np.ascontiguousarray(np.broadcast_to(self.D, (len(Z), self.S)))
            return K.integrate_segments_batch(*self.packed, W, D, self.x, self.lo, self.hi, *self.cfg.args)
        out = np.empty((len(Z), self.x.size))
        st = np.zeros(len(Z), dtype=np.int64)
        for k, w in enumerate(W):
            try:
                out[k] = run_schedule(self.fields, None, w, self.D, self.x, self.lo, self.hi, self.cfg)
            except EscapedDomain:
                out[k], st[k] = self.x, K.ESCAPED
        return out, st

    def endpoint(self, z):
        y, st = self.endpoints(z[None, :])
        return y[0], int(st[0])

    def jac(self, z, step=1e-7, central=False):
        """Finite differences in all coordinates of ``z`` (forward by default)."""
        P = z.size
        idx = np.arange(P)
        if central:
            Z = np.repeat(z[None, :], 2 * P, axis=0)
            Z[2 * idx, idx] += step
            Z[2 * idx + 1, idx] -= step
            Y, _ = self.endpoints(Z)
            return ((Y[0::2] - Y[1::2]) / (2 * step)).T
        Z = np.repeat(z[None, :], P + 1, axis=0)
        Z[idx + 1, idx] += step
        Y, _ = self.endpoints(Z)
        return ((Y[1:] - Y[0]) / step).T


def _radius_for(U, expo):
    """Smallest ``r`` with ``|U_s * r^-expo| <= 1`` for every segment."""
    norms = np.linalg.norm(U, axis=1)
    if not np.any(norms):
        return 0.0
    if np.allclose(expo, expo[0]):
        return float(norms.max() ** (1.0 / expo[0]))
    lo, hi = -40.0, 40.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if np.max(np.linalg.norm(U * np.exp(-mid * expo), axis=1)) <= 1.0:
            hi = mid
        else:
            lo = mid
    return float(np.exp(hi))


def _min_radius(sh: _Shooter, y, b0, r0, maxiter=60):
    """SLSQP: minimise ``log r`` subject to reaching ``y`` with ``|b_s| <= 1``."""
    S, F = sh.S, sh.F
    z0 = np.concatenate([b0.ravel(), [np.log(max(r0, 1e-300))]])
    yscale = max(r0, 1e-12)

    # drop directions the controls cannot move (orbit-invariant coordinates);
    # zero rows make the SLSQP subproblem singular
    J0 = sh.jac(z0)
    U, sv, _ = np.linalg.svd(J0, full_matrices=False)
    keep = sv > 1e-8 * max(sv[0], 1e-300) if sv.size else sv
    P = U[:, keep].T / yscale

    def eq(z):
        return P @ (sh.endpoint(z)[0] - y)

    def eq_jac(z):
        return P @ sh.jac(z)

    def ineq(z):
        b = z[:-1].reshape(S, F)
        return 1.0 - np.sum(b * b, axis=1)

    def ineq_jac(z):
        b = z[:-1].reshape(S, F)
        J = np.zeros((S, z.size))
        for s in range(S):
            J[s, s * F : (s + 1) * F] = -2 * b[s]
        return J

    grad = np.zeros(z0.size)
    grad[-1] = 1.0
    res = minimize(
        lambda z: z[-1],
        z0,
        jac=lambda z: grad,
        method="SLSQP",
        constraints=[{"type": "eq", "fun": eq, "jac": eq_jac}, {"type": "ineq", "fun": ineq, "jac": ineq_jac}],
        options={"maxiter": maxiter, "ftol": 1e-12},
    )
    return res.x


def _certify(sh: _Shooter, y, z, tol):
    """Clip ``b`` into the unit ball, re-simulate and return the radius if the
    endpoint lands within ``tol * r`` of ``y``."""
    b = z[:-1].reshape(sh.S, sh.F).copy()
    nb = np.linalg.norm(b, axis=1)
    b[nb > 1] /= nb[nb > 1, None]
    zc = np.concatenate([b.ravel(), z[-1:]])
    r = float(np.exp(z[-1]))
    yy, st = sh.endpoint(zc)
    err = float(np.linalg.norm(yy - y))
    if st == K.OK and err <= tol * max(r, 1e-300):
        return r, b, err
    return None


def _split(path: ControlPath, k: int) -> ControlPath:
    if k <= 1:
        return path
    return ControlPath(np.repeat(path.coeffs, k, axis=0), np.repeat(path.durations / k, k), path.metric, path.radius)


def _to_metric(path: ControlPath, basis, metric):
    """Re-express a cc path as a rho path (horizontal members at the front)."""
    if path.metric == metric:
        return path
    if path.metric == "cc" and metric == "rho":
        b = np.zeros((path.coeffs.shape[0], basis.q))
        b[:, : basis.family.m] = path.coeffs
        return ControlPath(b, path.durations, "rho", path.radius)
    raise ValueError("a rho path cannot be used as a cc hint")


@dataclass
class ReachResult:
    radius: float
    verdict: str  # "reached" | "unreached"
    path: ControlPath | None
    residual: float
    evaluations: int

    @property
    def reached(self):
        return self.verdict == "reached"

    def to_dict(self):
        return {
            "radius": self.radius if self.reached else None,
            "verdict": self.verdict,
            "residual": self.residual,
            "evaluations": self.evaluations,
        }


def _feasible_controls(basis, metric, x, y, rng, starts, budget, cfg, segments=SEGMENTS):
    """Unconstrained shooting (then CEM) for any controls reaching ``y``; returns
    a list of ControlPath candidates."""
    D = np.full(segments, 1.0 / segments)
    sh = _Shooter(basis, metric, D, x, cfg)
    S, F = sh.S, sh.F
    scale = max(np.linalg.norm(y - x), 1e-12)
    zpad = np.zeros(1)  # log r = 0: the b entries are raw velocities

    def fun(u):
        return (sh.endpoint(np.concatenate([u, zpad]))[0] - y) / scale

    def jac(u):
        return sh.jac(np.concatenate([u, zpad]))[:, :-1] / scale

    inits = []
    G = np.stack([f(x) for f in sh.fields], axis=1)
    u_lin = np.linalg.lstsq(G, y - x, rcond=None)[0]
    inits.append(np.tile(u_lin, S))
    for _ in range(max(starts - 1, 0)):
        inits.append(rng.normal(scale=np.linalg.norm(u_lin) + 0.1, size=S * F))
    found = []
    for u0 in inits:
        if sh.evals > budget:
            break
        sol = least_squares(fun, u0, jac=jac, method="trf", xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=50)
        if np.linalg.norm(fun(sol.x)) * scale <= 1e-9 * max(scale, 1e-3):
            found.append(sol.x)
    if not found and sh.evals <= budget:
        # cross-entropy search on the raw residual, then polish
        mu = inits[0].copy()
        sd = np.full(S * F, np.linalg.norm(u_lin) + 0.5)
        best, bestv = mu, np.inf
        for _ in range(CEM_ITERS):
            pop = mu + sd * rng.standard_normal((CEM_POPULATION, S * F))
            Y, st = sh.endpoints(np.hstack([pop, np.zeros((CEM_POPULATION, 1))]))
            val = np.linalg.norm(Y - y, axis=1) + np.where(st != K.OK, np.inf, 0.0)
            order = np.argsort(val)[:CEM_ELITE]
            if val[order[0]] < bestv:
                best, bestv = pop[order[0]], val[order[0]]
            mu = pop[order].mean(axis=0)
            sd = pop[order].std(axis=0) + 1e-6
            if sh.evals > budget:
                break
        sol = least_squares(fun, best, jac=jac, method="trf", xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=100)
        if np.linalg.norm(fun(sol.x)) * scale <= 1e-9 * max(scale, 1e-3):
            found.append(sol.x)
    out = []
    for u in found:
        U = u.reshape(S, F)
        r = _radius_for(U, sh.expo)
        if r == 0.0:
            continue
        b = U / r**sh.expo
        nb = np.linalg.norm(b, axis=1)
        b[nb > 1] /= nb[nb > 1, None]
        out.append(ControlPath(b, D, metric, r * (1 + 1e-12)))
    return out, sh.evals


def reach_upper(
    basis,
    x,
    y,
    metric: str = "cc",
    budget: int = 200000,
    cfg: IntegratorConfig = DEFAULT_CFG,
    hints=(),
    seed: int = 0,
    starts: int = 3,
    tol: float = REACH_TOL,
    min_segments: int = SEGMENTS,
    maxiter: int = 60,
) -> ReachResult:
    """Certified upper bound for ``d(x, y)`` over piecewise-constant controls.

    Warm starts come from ``hints`` (ControlPaths known to reach ``y``) and from
    unconstrained shooting; each is refined by SLSQP on ``log r`` and accepted
    only after re-simulation lands within ``tol * r``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _generators(basis, metric)
    if np.array_equal(x, y):
        return ReachResult(0.0, "reached", None, 0.0, 0)
    rng = np.random.default_rng(seed)
    cands = [_to_metric(h, basis, metric) for h in hints]
    evals = 0
    if not cands:
        cands, evals = _feasible_controls(basis, metric, x, y, rng, starts, budget, cfg)
    best = None
    for path in cands:
        path = _split(path, int(np.ceil(min_segments / path.coeffs.shape[0])))
        sh = _Shooter(basis, metric, path.durations, x, cfg)
        z0 = np.concatenate([path.coeffs.ravel(), [np.log(path.radius)]])
        cert0 = _certify(sh, y, z0, tol)
        if cert0 is not None and (best is None or cert0[0] < best[0]):
            best = (cert0[0], ControlPath(cert0[1], path.durations, metric, cert0[0]), cert0[2])
        if evals + sh.evals > budget:
            evals += sh.evals
            continue
        z = _min_radius(sh, y, path.coeffs, path.radius, maxiter)
        cert = _certify(sh, y, z, tol)
        evals += sh.evals
        if cert is not None and (best is None or cert[0] < best[0]):
            best = (cert[0], ControlPath(cert[1], path.durations, metric, cert[0]), cert[2])
    if best is None:
        return ReachResult(float("inf"), "unreached", None, float("nan"), evals)
    return ReachResult(best[0], "reached", best[1], best[2], evals)


def e_hint(emap: EMap, h) -> ControlPath | None:
    """The horizontal path behind ``E(h)`` as a cc ControlPath (drops idle segments)."""
    W, D = emap.schedule(h)
    keep = D != 0
    if not keep.any():
        return None
    W, D = W[keep], D[keep]
    b = W * np.sign(D)[:, None]
    L = float(np.sum(np.abs(D)))
    return ControlPath(b, np.abs(D) / L, "cc", L)


def phi_hint(phi: PhiMap, u, metric="rho") -> ControlPath | None:
    """Single-segment rho path behind ``Phi(u)``."""
    w = phi.weights(u)
    if not np.any(w):
        return None
    expo = phi.basis.lengths.astype(float)
    r = _radius_for(w[None, :], expo) * (1 + 1e-12)
    return ControlPath(w[None, :] / r**expo, np.ones(1), "rho", r)


# -- ball sampling -------------------------------------------------------------------------


@dataclass
class BallCloud:
    center: np.ndarray
    radius: float
    metric: str
    points: np.ndarray
    paths: list = field(default_factory=list)

    def __len__(self):
        return len(self.points)

    def verify(self, basis, cfg: IntegratorConfig = DEFAULT_CFG) -> float:
        """Largest re-simulation residual of the recorded paths."""
        return max((float(np.linalg.norm(p.endpoint(basis, self.center, cfg) - y)) for p, y in zip(self.paths, self.points)), default=0.0)

    def rows(self):
        n = self.points.shape[1]
        header = [f"x{i + 1}" for i in range(n)] + ["path"]
        return header, [[*map(float, y), p.digest()] for y, p in zip(self.points, self.paths)]


def random_controls(rng, F, segments=SEGMENTS):
    """A random admissible schedule: 1, 2, 4 or ``segments`` distinct pieces,
    mostly unit-speed directions."""
    pieces = int(rng.choice([k for k in (1, 2, 4, segments) if k <= segments]))
    d = rng.standard_normal((pieces, F))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    mags = np.where(rng.random(pieces) < 0.7, 1.0, rng.random(pieces) ** (1.0 / F))
    b = np.repeat(d * mags[:, None], segments // pieces, axis=0)
    return b, np.full(segments, 1.0 / segments)


def sample_ball(basis, x, r, metric: str = "cc", N: int = 200, seed: int = 0, cfg: IntegratorConfig = DEFAULT_CFG, max_retries: int = 10) -> BallCloud:
    """Endpoints of ``N`` random admissible paths of radius ``r`` (inner
    approximation of the ball); escaped paths are redrawn."""
    fields, packed, expo = _generators(basis, metric)
    x = np.ascontiguousarray(x, dtype=float)
    rng = np.random.default_rng(seed)
    pts, paths = [], []
    for _ in range(max_retries + 1):
        need = N - len(pts)
        if need <= 0:
            break
        batch = [ControlPath(*random_controls(rng, len(fields)), metric, r) for _ in range(need)]
        sh = _Shooter(basis, metric, batch[0].durations, x, cfg)
        Z = np.stack([np.concatenate([c.coeffs.ravel(), [np.log(r) if r > 0 else -np.inf]]) for c in batch])
        if r == 0:
            Y, st = np.repeat(x[None, :], need, axis=0), np.zeros(need, dtype=np.int64)
        else:
            Y, st = sh.endpoints(Z)
        for c, yv, s in zip(batch, Y, st):
            if s == K.OK:
                pts.append(yv)
                paths.append(c)
    if len(pts) < N:
        raise EscapedDomain(float("nan"), x)
    return BallCloud(x.copy(), float(r), metric, np.array(pts), paths)


# -- ball-box ----------------------------------------------------------------------------------


@dataclass
class BallBoxReport:
    eps: float
    inner_constant: float | None
    inner_lifted: int
    inner_total: int
    inner_max_residual: float
    unliftable: list
    outer_constant: float | None
    outer_values: list
    phi_outer_constant: float | None = None

    def to_dict(self):
        return {
            "eps": self.eps,
            "inner_constant": self.inner_constant,
            "inner_lifted": self.inner_lifted,
            "inner_total": self.inner_total,
            "inner_max_residual": self.inner_max_residual,
            "unliftable": self.unliftable[:10],
            "outer_constant": self.outer_constant,
            "outer_values": self.outer_values,
            "phi_outer_constant": self.phi_outer_constant,
        }


def _lift_all(emap, cloud_paths, radius, eps, basis, x, cfg, substeps=8):
    """Lift every path at ``radius``; stops at the first failure."""
    worst = 0.0
    tol = 1e-6 * emap.r
    for k, c in enumerate(cloud_paths):
        try:
            G = c.rescaled(radius).checkpoints(basis, x, substeps, cfg)
        except EscapedDomain:
            return False, k, worst
        out = lift_checkpoints(emap, G, raise_on_fail=False)
        if not out.ok or out.max_box_norm >= eps or out.max_residual > tol:
            return False, k, worst
        worst = max(worst, out.max_residual)
    return True, len(cloud_paths), worst


def inner_constant(basis, I, x, r, eps, N=200, seed=0, cfg: IntegratorConfig = DEFAULT_CFG, c_max=8.0, refine=5):
    """Largest ``c`` such that every sampled ``rho``-path of radius
    ``c eps^s r`` lifts into ``Q_I(eps)``; geometric scan then bisection."""
    emap = EMap(basis, I, x, r, cfg)
    s = basis.step
    paths = sample_ball(basis, x, 1.0, "rho", N, seed, cfg).paths
    base = eps**s * r
    c_hi, c_lo, worst, bad = None, None, 0.0, []
    c = c_max
    while c > 1e-6:
        ok, k, w = _lift_all(emap, paths, c * base, eps, basis, x, cfg)
        if ok:
            c_lo, worst = c, w
            break
        c_hi = c
        bad = [paths[k].digest()]
        c /= 2.0
    if c_lo is None:
        return None, 0, N, float("nan"), bad
    if c_hi is not None:
        for _ in range(refine):
            mid = np.sqrt(c_lo * c_hi)
            ok, k, w = _lift_all(emap, paths, mid * base, eps, basis, x, cfg)
            if ok:
                c_lo, worst = mid, max(worst, w)
            else:
                c_hi = mid
                bad = [paths[k].digest()]
    return float(c_lo), N, N, float(worst), bad


def outer_values(basis, I, x, r, eps, density=3, seed=0, cfg: IntegratorConfig = DEFAULT_CFG, budget=200000):
    """``rho``-upper bounds of the images of a ``density^p`` grid of ``Q_I(eps)``,
    normalised by ``eps^{1/s} r``."""
    emap = EMap(basis, I, x, r, cfg)
    s = basis.step
    vals = []
    for h in box_grid(emap.ell, eps, density):
        if not np.any(h):
            continue
        y = emap(h)
        hint = e_hint(emap, h)
        res = reach_upper(basis, x, y, "rho", budget, cfg, hints=[hint] if hint else (), seed=seed)
        vals.append(res.radius / (eps ** (1.0 / s) * r) if res.reached else float("inf"))
    return vals


def ball_box_check(basis, I, x, r, eps, N=200, seed=0, cfg: IntegratorConfig = DEFAULT_CFG, density=3, eta2=None) -> BallBoxReport:
    """Inner (lifting) and outer (reachability) constants of the ball-box
    inclusions at ``(I, x, r)`` and box size ``eps``."""
    if eps == 0:
        return BallBoxReport(0.0, None, 0, 0, 0.0, [], None, [])
    c, lifted, total, worst, bad = inner_constant(basis, I, x, r, eps, N, seed, cfg)
    vals = outer_values(basis, I, x, r, eps, density, seed, cfg)
    phi_c = None
    if eta2:
        phi = PhiMap(basis, I, x, r, cfg)
        s = basis.step
        pv = []
        for u in box_grid(np.ones(phi.p, dtype=np.int64), eta2 / np.sqrt(phi.p), density):
            if not np.any(u):
                continue
            hint = phi_hint(phi, u)
            res = reach_upper(basis, x, phi(u), "rho", cfg=cfg, hints=[hint], seed=seed)
            pv.append(res.radius / (eta2 ** (1.0 / s) * r))
        phi_c = float(max(pv)) if pv else None
    return BallBoxReport(eps, c, lifted, total, worst, bad, float(max(vals)) if vals else None, vals, phi_c)
