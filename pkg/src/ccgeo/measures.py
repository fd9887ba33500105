"""Area-formula Monte Carlo for ``sigma^p`` of control balls, doubling ratios and
Poincare constants.

Points ``h`` are drawn uniformly in a box sized from a lifted pilot cloud;
``sigma^p(B) ~ vol(box) * mean(|dE(h)| 1[E(h) in B])``.  Membership uses the
length of the horizontal path behind ``E(h)`` as a quick certificate and falls
back to the shooting search of :func:`metrics.reach_upper`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from . import multilinear as ml
from .flows import DEFAULT_CFG, EMap, IntegratorConfig
from .metrics import e_hint, reach_upper, sample_ball
from .polynomial import Poly
from .pullback import lift_checkpoints

PILOT = 128
SAFETY = 1.3
EDGE = 0.97
UNRELIABLE_FRACTION = 0.05


@dataclass
class AreaSample:
    """One Monte Carlo sample set over a box in ``h``-space."""

    tuple: ml.TupleIndex
    half_widths: np.ndarray
    h: np.ndarray
    y: np.ndarray
    jac: np.ndarray  # |d_1 E ^ ... ^ d_p E|
    dist: np.ndarray  # certified upper bound of the distance (inf when unknown)
    oracle: np.ndarray  # 0 certificate, 1 search, -1 failure
    threshold: float

    @property
    def volume(self):
        return float(np.prod(2 * self.half_widths))

    @property
    def inside(self):
        return self.dist <= self.threshold

    @property
    def failures(self):
        return int(np.sum(self.oracle < 0))

    def oracle_mix(self):
        return {"certificate": int(np.sum(self.oracle == 0)), "search": int(np.sum(self.oracle == 1)), "failed": self.failures}


@dataclass
class MeasureReport:
    center: np.ndarray
    radius: float
    tuple: ml.TupleIndex
    sigma_p: float
    std_error: float
    sample_size: int
    p: int
    method: str = "area-formula"
    oracle_mix: dict = field(default_factory=dict)
    unreliable: bool = False
    sample: AreaSample | None = field(default=None, repr=False)

    def to_dict(self):
        return {
            "center": list(map(float, self.center)),
            "radius": self.radius,
            "tuple": list(self.tuple.indices),
            "p": self.p,
            "sigma_p": self.sigma_p,
            "std_error": self.std_error,
            "samples": self.sample_size,
            "method": self.method,
            "oracle_mix": self.oracle_mix,
            "unreliable": self.unreliable,
        }


def wedge_volumes(J):
    """``sqrt(det(J^T J))`` for a stack of ``n x p`` Jacobians."""
    return np.sqrt(np.maximum(np.linalg.det(np.einsum("bip,biq->bpq", J, J)), 0.0))


def _pilot_box(emap, basis, x, r, metric, seed, cfg, pilot=PILOT):
    cloud = sample_ball(basis, x, r, metric, pilot, seed, cfg)
    ends = []
    for path in cloud.paths:
        out = lift_checkpoints(emap, path.checkpoints(basis, x, 8, cfg), raise_on_fail=False)
        if out.ok:
            ends.append(np.abs(out.thetas).max(axis=0))
    if not ends:
        raise RuntimeError("no pilot path could be lifted through E")
    w = SAFETY * np.max(ends, axis=0)
    # floor each half-width at the certificate scale so degenerate pilots still cover the ball
    return np.maximum(w, 1e-3)


def _distances(emap, basis, x, Y, H, threshold, metric, cfg, seed):
    """Certified distance upper bounds, skipping the search when the E-path
    certificate already places the point inside the ball."""
    n = len(H)
    dist = np.full(n, np.inf)
    oracle = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        cert = emap.path_length(H[k])
        if cert <= threshold:
            dist[k], oracle[k] = cert, 0
            continue
        hint = e_hint(emap, H[k])
        res = reach_upper(basis, x, Y[k], metric, budget=20000, cfg=cfg, hints=[hint] if hint else (), seed=seed + k)
        if res.reached:
            dist[k], oracle[k] = min(res.radius, cert), 1
    return dist, oracle


def _evaluate(emap, basis, x, H, w, thr, metric, cfg, seed):
    Y, st = emap.batch(H)
    J, st2 = emap.jacobian_batch(H)
    jac = wedge_volumes(J)
    dist, oracle = _distances(emap, basis, x, Y, H, thr, metric, cfg, seed)
    bad = (st != K.OK) | (st2 != K.OK)
    oracle[bad], dist[bad] = -1, np.inf
    return AreaSample(emap.tuple, w, H, Y, jac, dist, oracle, thr)


def _needs_growth(sample: AreaSample):
    edge = sample.inside & np.any(np.abs(sample.h) > EDGE * sample.half_widths, axis=1)
    return bool(edge.any())


def _resolve(basis, x, r, I):
    if I is None:
        return ml.select_maximal_tuple(basis, x, r)
    if not isinstance(I, ml.TupleIndex):
        return ml.TupleIndex.from_basis(basis, I)
    return I


def area_sample(basis, x, r, metric="cc", M=2000, seed=0, cfg: IntegratorConfig = DEFAULT_CFG, I=None, threshold=None, max_grow=3) -> AreaSample:
    """Uniform ``h``-sample of the box around ``E^-1(B(x, r))`` with distances."""
    x = np.asarray(x, dtype=float)
    I = _resolve(basis, x, r, I)
    thr = r if threshold is None else threshold
    emap = EMap(basis, I, x, r, cfg)
    w = _pilot_box(emap, basis, x, thr, metric, seed, cfg)
    rng = np.random.default_rng(seed)
    for _ in range(max_grow + 1):
        H = (rng.random((M, I.p)) * 2 - 1) * w
        sample = _evaluate(emap, basis, x, H, w, thr, metric, cfg, seed)
        if not _needs_growth(sample):
            break
        w = w * SAFETY
    return sample


def paired_samples(basis, x, r, R, metric="cc", M=2000, seed=0, cfg: IntegratorConfig = DEFAULT_CFG, I=None, max_grow=3):
    """Area samples at radii ``r`` and ``R`` sharing the same ``h`` draws.

    Common random numbers make the ratio of the two estimates far less noisy
    than independent samples (exact on dilation-homogeneous families).  Falls
    back to independent samples when the two tuples differ in dimension.
    """
    x = np.asarray(x, dtype=float)
    Ir, IR = _resolve(basis, x, r, I), _resolve(basis, x, R, I)
    if Ir.p != IR.p:
        return (area_sample(basis, x, r, metric, M, seed, cfg, Ir, max_grow=max_grow),
                area_sample(basis, x, R, metric, M, seed + 7919, cfg, IR, max_grow=max_grow))
    er, eR = EMap(basis, Ir, x, r, cfg), EMap(basis, IR, x, R, cfg)
    w = np.maximum(_pilot_box(er, basis, x, r, metric, seed, cfg), _pilot_box(eR, basis, x, R, metric, seed + 7919, cfg))
    rng = np.random.default_rng(seed)
    for _ in range(max_grow + 1):
        H = (rng.random((M, Ir.p)) * 2 - 1) * w
        a = _evaluate(er, basis, x, H, w, r, metric, cfg, seed)
        b = _evaluate(eR, basis, x, H, w, R, metric, cfg, seed)
        if not (_needs_growth(a) or _needs_growth(b)):
            break
        w = w * SAFETY
    return a, b


def _report(sample: AreaSample, x, r) -> MeasureReport:
    vals = sample.jac * sample.inside
    M = len(vals)
    V = sample.volume
    est = V * float(np.mean(vals))
    se = V * float(np.std(vals, ddof=1)) / np.sqrt(M) if M > 1 else float("nan")
    return MeasureReport(
        np.asarray(x, dtype=float),
        float(r),
        sample.tuple,
        est,
        se,
        M,
        sample.tuple.p,
        oracle_mix=sample.oracle_mix(),
        unreliable=sample.failures > UNRELIABLE_FRACTION * M,
        sample=sample,
    )


def sigma_ball(basis, I, x, r, metric="cc", M=2000, seed=0, cfg: IntegratorConfig = DEFAULT_CFG) -> MeasureReport:
    """``sigma^p(B_metric(x, r))`` by the area formula over ``E_{I,x,r}``;
    ``I=None`` selects the maximal tuple at ``(x, r)``."""
    if r <= 0:
        raise ValueError("r must be positive")
    return _report(area_sample(basis, x, r, metric, M, seed, cfg, I), x, r)


@dataclass
class DoublingReport:
    ratio: float
    std_error: float
    small: MeasureReport
    large: MeasureReport

    @property
    def unreliable(self):
        return self.small.unreliable or self.large.unreliable

    def to_dict(self):
        return {
            "ratio": self.ratio,
            "std_error": self.std_error,
            "small": self.small.to_dict(),
            "large": self.large.to_dict(),
            "unreliable": self.unreliable,
        }


def doubling_ratio(basis, x, r, metric="cc", M=2000, seed=0, cfg: IntegratorConfig = DEFAULT_CFG, I=None) -> DoublingReport:
    """``sigma(B(x, 2r)) / sigma(B(x, r))``; the tuple is re-selected at ``2r``
    unless ``I`` is given.  Both radii share one set of ``h`` draws."""
    if r <= 0:
        raise ValueError("r must be positive")
    a, b = paired_samples(basis, x, r, 2 * r, metric, M, seed, cfg, I)
    small, large = _report(a, x, r), _report(b, x, 2 * r)
    if small.sigma_p <= 0:
        return DoublingReport(float("inf"), float("nan"), small, large)
    ratio = large.sigma_p / small.sigma_p
    if a.h is b.h or np.array_equal(a.h, b.h):
        # delta method for a ratio of means over shared draws
        u, v = a.jac * a.inside, b.jac * b.inside
        mu, mv = u.mean(), v.mean()
        d = v / mu - mv * u / mu**2
        se = float(np.std(d, ddof=1) / np.sqrt(len(d)))
    else:
        se = ratio * float(np.hypot(small.std_error / small.sigma_p, large.std_error / max(large.sigma_p, 1e-300)))
    return DoublingReport(float(ratio), se, small, large)


# -- Poincare -----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SuiteFunction:
    name: str
    poly: Poly

    def __call__(self, Y):
        return np.array([self.poly(y) for y in Y])

    def grad(self, Y):
        parts = [self.poly.diff(i) for i in range(self.poly.n)]
        return np.array([[d(y) for d in parts] for y in Y])

    def scaled(self, c):
        return SuiteFunction(f"{c}*{self.name}", self.poly * c)


SUITE_SEED = 20240917


def default_suite(n: int, random_count: int = 5, seed: int = SUITE_SEED):
    """Coordinates, quadratic monomials and seeded random polynomials of degree <= 2."""
    xs = [Poly.var(n, i) for i in range(n)]
    out = [SuiteFunction(f"x{i + 1}", xs[i]) for i in range(n)]
    for i in range(n):
        for j in range(i, n):
            out.append(SuiteFunction(f"x{i + 1}*x{j + 1}", xs[i] * xs[j]))
    rng = np.random.default_rng(seed)
    for k in range(random_count):
        p = Poly.const(n, rng.normal())
        for i in range(n):
            p = p + rng.normal() * xs[i]
            for j in range(i, n):
                p = p + rng.normal() * xs[i] * xs[j]
        out.append(SuiteFunction(f"random{k + 1}", p))
    return out


@dataclass
class PoincareReport:
    ratio: float
    ratios: dict
    lhs: dict
    rhs: dict
    flagged: list
    enlarge: float
    small: MeasureReport
    large: MeasureReport

    def to_dict(self):
        return {
            "ratio": self.ratio,
            "ratios": self.ratios,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "flagged": self.flagged,
            "enlarge": self.enlarge,
            "small": self.small.to_dict(),
            "large": self.large.to_dict(),
        }


def poincare_terms(f: SuiteFunction, basis, r, small: AreaSample, large: AreaSample):
    """``LHS = int_B |f - f_B|`` and ``RHS = sum_j int_{CB} |r X_j f|``."""
    w = small.jac * small.inside
    fv = f(small.y[small.inside]) if small.inside.any() else np.zeros(0)
    if fv.size == 0 or np.ptp(fv) == 0.0:
        lhs = 0.0
    else:
        wi = w[small.inside]
        mean = float(np.sum(wi * fv) / np.sum(wi))
        lhs = small.volume * float(np.sum(wi * np.abs(fv - mean))) / len(w)
    Yl = large.y[large.inside]
    wl = large.jac[large.inside]
    if Yl.size == 0:
        return lhs, 0.0
    g = f.grad(Yl)
    Xf = np.zeros(len(Yl))
    for X in basis.family.horizontal:
        Xf += np.abs(np.einsum("bi,bi->b", np.array([X(y) for y in Yl]), g)) * r
    rhs = large.volume * float(np.sum(wl * Xf)) / len(large.jac)
    return lhs, rhs


def poincare_ratio(basis, x, r, suite=None, M=1000, seed=0, cfg: IntegratorConfig = DEFAULT_CFG, enlarge=3.0, metric="cc", noise=1e-12) -> PoincareReport:
    """Max over ``suite`` of ``LHS / RHS``; a vanishing RHS under a positive LHS
    is flagged instead of being divided."""
    x = np.asarray(x, dtype=float)
    if suite is None:
        suite = default_suite(basis.dim)
    small = area_sample(basis, x, r, metric, M, seed, cfg)
    large = area_sample(basis, x, enlarge * r, metric, M, seed + 104729, cfg)
    ratios, lhs_d, rhs_d, flagged = {}, {}, {}, []
    for f in suite:
        lhs, rhs = poincare_terms(f, basis, r, small, large)
        lhs_d[f.name], rhs_d[f.name] = lhs, rhs
        if lhs == 0.0:
            ratios[f.name] = 0.0
        elif rhs <= noise:
            flagged.append(f.name)
            ratios[f.name] = float("inf")
        else:
            ratios[f.name] = lhs / rhs
    finite = [v for v in ratios.values() if np.isfinite(v)]
    best = max(finite) if finite else 0.0
    return PoincareReport(float(best), ratios, lhs_d, rhs_d, flagged, enlarge, _report(small, x, r), _report(large, x, enlarge * r))
