"""Acceptance matrix: twelve property checks over the built-in families.

Every check returns a :class:`CriterionResult` carrying the measured values
and the tolerance it was judged against.  Nothing here is tuned to pass; sample
sizes live in :class:`Settings` and the thresholds are module constants.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import fields as F
from . import flows as FL
from . import measures as MS
from . import metrics as MT
from . import multilinear as ml
from . import pullback as PB
from .errors import CcgeoError

BUILTINS = ("euclid2in3", "heisenberg", "grushin", "martinet", "shear")

# thresholds
BRACKET_REL_TOL = 1e-6
EXP_AP_SLACK = 0.15
EXP_AP_NOISE = 1e-11
CHI0_TOL = 1e-3
FRAME_RES_TOL = 1e-4
PUSHFORWARD_TOL = 1e-3
A_ZERO_TOL = 1e-12
PSI_BAND = (0.5, 2.0)
LIFT_RES_FACTOR = 1e-6
SEED_STABILITY = 0.25
DTHETA_TOL = 0.5
DOUBLING_TARGETS = {"euclid2in3": (4.0, 0.10), "heisenberg": (16.0, 0.15), "grushin": (8.0, 0.15)}
POINCARE_MAX = 10.0
ORBIT_TOL = 1e-8
BALLBOX_EPS = 0.3
BALLBOX_RADII = (0.05, 0.1)
BALLBOX_FAMILIES = ("heisenberg", "grushin")
BASE_RADIUS = 0.1

# orbit-invariant coordinate (0-based) and an off-orbit target per family
ORBIT_CASES = {"euclid2in3": (2, (0.0, 0.0, 0.5)), "shear": (2, (0.0, 0.0, 1.5))}


@dataclass
class Settings:
    seed: int = 0
    bracket_points: int = 100
    pushforward_rays: int = 5
    pushforward_radii: int = 10
    psi_pairs: int = 200
    ballbox_samples: int = 200
    outer_density: int = 3
    injectivity_density: int = 9
    dtheta_density: int = 5
    doubling_samples: int = 600
    poincare_samples: int = 600
    poincare_radii: tuple = (0.1, 0.2)
    orbit_samples: int = 50
    neumann_trials: int = 1000


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    summary: str
    tolerance: str
    measured: dict = field(default_factory=dict)
    elapsed: float = 0.0

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.number:2d} {self.name}: {self.summary} (tol: {self.tolerance}; {self.elapsed:.1f}s)"

    def to_dict(self):
        return asdict(self)


def _basis(name):
    fam = F.builtin_family(name)
    return F.generate_commutators(fam)


def _point(name):
    return np.array(F.DEFAULT_POINTS[name], dtype=float)


def _spread(a, b):
    """Relative half-difference ``|a - b| / mean``; 0 when both vanish."""
    m = 0.5 * (abs(a) + abs(b))
    return 0.0 if m == 0 else abs(a - b) / m


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


# -- 1 brackets ------------------------------------------------------------------------


def symbolic_members(fam: F.Family):
    """``[X_w1, [X_w2, ...]]`` for every word, differentiated by sympy."""
    import sympy

    xs = sympy.symbols(f"x1:{fam.dim + 1}")
    base = [sympy.Matrix([p.to_sympy(xs) for p in X.poly.comps]) for X in fam.horizontal]
    J = lambda V: V.jacobian(xs)
    built = {}
    for w in F.enumerate_words(fam.m, fam.step):
        if len(w) == 1:
            built[w] = base[w[0] - 1]
        else:
            V, W = built[w[:1]], built[w[1:]]
            built[w] = sympy.simplify(J(W) * V - J(V) * W)
    return [sympy.lambdify(xs, built[w], "numpy") for w in F.enumerate_words(fam.m, fam.step)], list(F.enumerate_words(fam.m, fam.step))


def crit_brackets(families, st: Settings):
    rng = np.random.default_rng(st.seed)
    worst = {}
    for name in families:
        fam = F.builtin_family(name)
        if fam.step < 2:
            continue
        numeric = F.generate_commutators(fam, analytic=False)
        funcs, words = symbolic_members(fam)
        err = 0.0
        for _ in range(st.bracket_points):
            x = rng.uniform(-1, 1, fam.dim)
            for Y, f, w in zip(numeric.members, funcs, words):
                exact = np.asarray(f(*x), dtype=float).ravel()
                err = max(err, np.linalg.norm(Y(x) - exact) / max(np.linalg.norm(exact), 1.0))
        worst[name] = float(err)
    ok = all(v <= BRACKET_REL_TOL for v in worst.values())
    return ok, worst, f"max rel. error {max(worst.values(), default=0.0):.2e}", f"<= {BRACKET_REL_TOL:g}"


# -- 2 exp_ap order ----------------------------------------------------------------------


def remainder_slope(fam, basis, word, x, hs):
    """Log-log slope of ``|exp_ap(h X_w) x - exp(h X_w) x|``; ``None`` when the
    remainder sits at the integration noise floor (exact construction)."""
    k = basis.index_of[tuple(word)]
    R = np.array([np.linalg.norm(FL.approx_exponential(word, h, x, fam) - FL.flow(basis.members[k], x, h, fam=fam)) for h in hs])
    if R.max() <= EXP_AP_NOISE:
        return None, R
    keep = R > EXP_AP_NOISE
    if keep.sum() < 3:
        return None, R
    return float(np.polyfit(np.log(hs[keep]), np.log(R[keep]), 1)[0]), R


def crit_exp_ap(families, st: Settings):
    hs = np.logspace(-3, -1, 7)
    rng = np.random.default_rng(st.seed + 1)
    out, ok = {}, True
    for name in families:
        basis = _basis(name)
        fam = basis.family
        pts = [_point(name), _point(name) + rng.uniform(-0.3, 0.3, fam.dim)]
        for w in basis.words:
            if len(w) == 1:
                continue
            need = 1 + 1 / len(w) - EXP_AP_SLACK
            for j, x in enumerate(pts):
                slope, _ = remainder_slope(fam, basis, w, x, hs)
                key = f"{name}:{''.join(map(str, w))}@{j}"
                out[key] = "exact" if slope is None else slope
                if slope is not None and slope < need:
                    ok = False
    slopes = [v for v in out.values() if v != "exact"]
    summ = f"{len(out)} word/point pairs, {len(out) - len(slopes)} exact, min slope {min(slopes):.3f}" if slopes else f"{len(out)} pairs, all exact"
    return ok, out, summ, f">= 1 + 1/l - {EXP_AP_SLACK}"


# -- 3 chi bound ---------------------------------------------------------------------------


def crit_chi(families, st: Settings):
    out, ok = {}, True
    for name in [f for f in ("heisenberg", "grushin") if f in families]:
        basis = _basis(name)
        x = _point(name)
        I = ml.select_maximal_tuple(basis, x, BASE_RADIUS)
        fe = PB.FrameExpansion(FL.EMap(basis, I, x, BASE_RADIUS))
        eps0 = PB.calibrate_eps0(fe)
        fit = PB.fit_chi_bound(fe, eps0, 7)
        out[name] = {"tuple": str(I), "eps0": eps0, "C": fit.C, "chi0": fit.chi0, "max_residual": fit.max_residual, "slope": fit.slope}
        ok &= bool(np.isfinite(fit.C) and fit.chi0 <= CHI0_TOL and fit.max_residual <= FRAME_RES_TOL)
    summ = "; ".join(f"{k} C={v['C']:.3g} chi0={v['chi0']:.1e} res={v['max_residual']:.1e}" for k, v in out.items())
    return ok, out, summ, f"C finite, chi(0) <= {CHI0_TOL:g}, residual <= {FRAME_RES_TOL:g}"


# -- 4 A-ODE ----------------------------------------------------------------------------------


def crit_a_ode(families, st: Settings):
    out, ok = {}, True
    rng = np.random.default_rng(st.seed + 4)
    if "heisenberg" in families:
        basis = _basis("heisenberg")
        x = _point("heisenberg")
        I = ml.select_maximal_tuple(basis, x, BASE_RADIUS)
        pf = PB.PullbackFrame(basis, I, x, BASE_RADIUS)
        eta2 = PB.calibrate_eta2(pf, seed=st.seed)
        worst = 0.0
        for _ in range(st.pushforward_rays):
            om = rng.standard_normal(pf.p)
            om /= np.linalg.norm(om)
            for rho in np.linspace(0.1, 1.0, st.pushforward_radii) * 2 * eta2:
                worst = max(worst, float(pf.pushforward_errors(rho * om).max()))
        out["heisenberg_pushforward"] = worst
        out["heisenberg_rho_max"] = 2 * eta2
        ok &= worst <= PUSHFORWARD_TOL
    if "euclid2in3" in families:
        basis = _basis("euclid2in3")
        x = _point("euclid2in3")
        I = ml.select_maximal_tuple(basis, x, BASE_RADIUS)
        pf = PB.PullbackFrame(basis, I, x, BASE_RADIUS)
        amax = max(float(np.abs(pf.A(u)).max()) for u in PB.ball_sample(pf.p, 1.0, 20, rng))
        out["euclid_max_A"] = amax
        ok &= amax <= A_ZERO_TOL
    summ = ", ".join(f"{k}={_fmt(v)}" for k, v in out.items())
    return ok, out, summ, f"pushforward <= {PUSHFORWARD_TOL:g}, euclid |A| <= {A_ZERO_TOL:g}"


# -- 5 Psi bi-Lipschitz -------------------------------------------------------------------------


def psi_ratios(pf: PB.PullbackFrame, eta2, pairs, rng):
    ratios = np.empty(pairs)
    for k in range(pairs):
        u1, v, w = PB.ball_sample(pf.p, eta2, 3, rng)
        ratios[k] = np.linalg.norm(pf.psi(u1, v) - pf.psi(u1, w)) / np.linalg.norm(v - w)
    return ratios


def crit_psi(families, st: Settings):
    out, ok = {}, True
    for name in families:
        basis = _basis(name)
        x = _point(name)
        I = ml.select_maximal_tuple(basis, x, BASE_RADIUS)
        pf = PB.PullbackFrame(basis, I, x, BASE_RADIUS)
        eta2 = PB.calibrate_eta2(pf, seed=st.seed)
        r = psi_ratios(pf, eta2, st.psi_pairs, np.random.default_rng(st.seed + 5))
        out[name] = {"eta2": eta2, "min": float(r.min()), "max": float(r.max())}
        ok &= bool(r.min() >= PSI_BAND[0] and r.max() <= PSI_BAND[1])
    summ = "; ".join(f"{k} eta2={v['eta2']:.3g} [{v['min']:.3f}, {v['max']:.3f}]" for k, v in out.items())
    return ok, out, summ, f"ratios in {list(PSI_BAND)}"


# -- 6/7 ball-box -------------------------------------------------------------------------------


def crit_inner(families, st: Settings):
    out, ok = {}, True
    for name in [f for f in BALLBOX_FAMILIES if f in families]:
        basis = _basis(name)
        x = _point(name)
        for r in BALLBOX_RADII:
            I = ml.select_maximal_tuple(basis, x, r)
            cs = []
            for seed in (st.seed, st.seed + 1):
                c, lifted, total, worst, _ = MT.inner_constant(basis, I, x, r, BALLBOX_EPS, st.ballbox_samples, seed)
                cs.append(c)
                ok &= c is not None and lifted == total and worst <= LIFT_RES_FACTOR * r
            spread = _spread(*cs) if None not in cs else float("inf")
            ok &= spread <= SEED_STABILITY
            out[f"{name}@{r}"] = {"c": cs, "spread": spread}
    summ = "; ".join(f"{k} c={[round(c, 4) if c else c for c in v['c']]}" for k, v in out.items())
    return ok, out, summ, f"all {st.ballbox_samples} lift, seed spread <= {SEED_STABILITY:.0%}"


def crit_outer(families, st: Settings):
    out, ok = {}, True
    for name in [f for f in BALLBOX_FAMILIES if f in families]:
        basis = _basis(name)
        x = _point(name)
        Cs = []
        for seed in (st.seed, st.seed + 1):
            vals = []
            for r in BALLBOX_RADII:
                I = ml.select_maximal_tuple(basis, x, r)
                vals += MT.outer_values(basis, I, x, r, BALLBOX_EPS, st.outer_density, seed)
            Cs.append(float(max(vals)))
        spread = _spread(*Cs)
        ok &= bool(np.all(np.isfinite(Cs)) and spread <= SEED_STABILITY)
        out[name] = {"C": Cs, "spread": spread}
    summ = "; ".join(f"{k} C={[round(c, 4) for c in v['C']]}" for k, v in out.items())
    return ok, out, summ, f"all grid images reached, seed spread <= {SEED_STABILITY:.0%}"


# -- 8 injectivity ---------------------------------------------------------------------------------


def crit_injectivity(families, st: Settings):
    out, ok = {}, True
    for name in families:
        basis = _basis(name)
        x = _point(name)
        I = ml.select_maximal_tuple(basis, x, BASE_RADIUS)
        eta3 = PB.calibrate_eta3(basis, I, x, BASE_RADIUS)
        rep = PB.injectivity_check_E(basis, I, x, BASE_RADIUS, eta3 / 2, st.injectivity_density, raise_on_collision=False)
        grid = PB.euclid_grid(I.p, eta3, st.dtheta_density)
        lift = PB.lift_Phi_through_E(basis, I, x, BASE_RADIUS, eta3, grid)
        out[name] = {"eta3": eta3, "injective": rep.injective, "min_distance": rep.min_distance, "threshold": rep.threshold, "dtheta_dev": lift.max_dev}
        ok &= rep.injective and lift.max_dev <= DTHETA_TOL
    summ = "; ".join(f"{k} inj={v['injective']} |dtheta-I|={v['dtheta_dev']:.3f}" for k, v in out.items())
    return ok, out, summ, f"no collisions on 9^p grid, |dtheta - I| <= {DTHETA_TOL}"


# -- 9 doubling ---------------------------------------------------------------------------------------


def crit_doubling(families, st: Settings):
    out, ok = {}, True
    for name, (target, rel) in DOUBLING_TARGETS.items():
        if name not in families:
            continue
        basis = _basis(name)
        rep = MS.doubling_ratio(basis, _point(name), BASE_RADIUS, M=st.doubling_samples, seed=st.seed)
        out[name] = {"ratio": rep.ratio, "std_error": rep.std_error, "target": target, "unreliable": rep.unreliable}
        ok &= abs(rep.ratio - target) <= rel * target and not rep.unreliable
    summ = "; ".join(f"{k}={v['ratio']:.3f}±{v['std_error']:.3f}" for k, v in out.items())
    return ok, out, summ, ", ".join(f"{k} {t:g}±{r:.0%}" for k, (t, r) in DOUBLING_TARGETS.items() if k in families)


# -- 10 Poincare ---------------------------------------------------------------------------------------


def crit_poincare(families, st: Settings):
    out, ok = {}, True
    for name in families:
        basis = _basis(name)
        x = _point(name)
        const = MS.SuiteFunction("const", MS.Poly.const(basis.dim, 2.5))
        for r in st.poincare_radii:
            vals, const_ratio = [], []
            for seed in (st.seed, st.seed + 1):
                rep = MS.poincare_ratio(basis, x, r, M=st.poincare_samples, seed=seed)
                vals.append(rep.ratio)
                lhs, _ = MS.poincare_terms(const, basis, r, rep.small.sample, rep.large.sample)
                const_ratio.append(lhs)
                ok &= not rep.flagged
            spread = _spread(*vals)
            ok &= max(vals) <= POINCARE_MAX and spread <= SEED_STABILITY and all(c == 0.0 for c in const_ratio)
            out[f"{name}@{r}"] = {"ratio": vals, "spread": spread, "constant_lhs": const_ratio}
    summ = "; ".join(f"{k} {max(v['ratio']):.3g} (spread {v['spread']:.0%})" for k, v in out.items())
    return ok, out, summ, f"<= {POINCARE_MAX:g}, seed spread <= {SEED_STABILITY:.0%}, constant f -> 0"


# -- 11 orbit confinement -------------------------------------------------------------------------------


def crit_orbit(families, st: Settings):
    out, ok = {}, True
    for name, (coord, target) in ORBIT_CASES.items():
        if name not in families:
            continue
        basis = _basis(name)
        x = _point(name)
        cloud = MT.sample_ball(basis, x, BASE_RADIUS, "cc", st.orbit_samples, st.seed)
        drift = float(np.max(np.abs(cloud.points[:, coord] - x[coord])))
        I = ml.select_maximal_tuple(basis, x, BASE_RADIUS)
        emap = FL.EMap(basis, I, x, BASE_RADIUS)
        lift_drift = 0.0
        for path in cloud.paths[:10]:
            res = PB.lift_checkpoints(emap, path.checkpoints(basis, x), raise_on_fail=False)
            ys, _ = emap.batch(res.thetas)
            lift_drift = max(lift_drift, float(np.max(np.abs(ys[:, coord] - x[coord]))))
        cross = MT.reach_upper(basis, x, np.array(target), "cc", budget=20000, seed=st.seed)
        out[name] = {"cloud_drift": drift, "lift_drift": lift_drift, "cross_orbit": cross.verdict}
        ok &= drift <= ORBIT_TOL and lift_drift <= ORBIT_TOL and not cross.reached
    summ = "; ".join(f"{k} drift={max(v['cloud_drift'], v['lift_drift']):.1e} cross={v['cross_orbit']}" for k, v in out.items())
    return ok, out, summ, f"drift <= {ORBIT_TOL:g}, cross-orbit unreached"


# -- 12 Neumann ---------------------------------------------------------------------------------------------


def crit_neumann(families, st: Settings):
    rng = np.random.default_rng(st.seed + 12)
    worst, fails = 0.0, 0
    for _ in range(st.neumann_trials):
        p = int(rng.integers(1, 5))
        chi = rng.standard_normal((p, p))
        chi *= rng.uniform(0, 0.5) / np.linalg.norm(chi, 2)
        b = rng.standard_normal((p, p))
        b *= rng.uniform(0, 1.0) / np.linalg.norm(b, 2)
        v = PB.neumann_bound_check(chi, b)
        worst = max(worst, v.lhs / v.rhs if v.rhs > 0 else 0.0)
        fails += not v.holds
    return fails == 0, {"trials": st.neumann_trials, "violations": fails, "max_lhs_over_rhs": worst}, f"{fails} violations, max LHS/RHS {worst:.3f}", "no violations"


CRITERIA = {
    "brackets": (1, crit_brackets),
    "exp-ap": (2, crit_exp_ap),
    "chi": (3, crit_chi),
    "a-ode": (4, crit_a_ode),
    "psi": (5, crit_psi),
    "inner": (6, crit_inner),
    "outer": (7, crit_outer),
    "injectivity": (8, crit_injectivity),
    "doubling": (9, crit_doubling),
    "poincare": (10, crit_poincare),
    "orbit": (11, crit_orbit),
    "neumann": (12, crit_neumann),
}


def run_criterion(name: str, families=BUILTINS, settings: Settings | None = None) -> CriterionResult:
    number, fn = CRITERIA[name]
    st = settings or Settings()
    t0 = time.perf_counter()
    try:
        ok, measured, summ, tol = fn(tuple(families), st)
    except CcgeoError as exc:
        ok, measured, summ, tol = False, {"error": repr(exc)}, f"error: {exc!r}", "-"
    return CriterionResult(number, name, bool(ok), summ, tol, measured, time.perf_counter() - t0)


def run_suite(only=None, families=BUILTINS, settings: Settings | None = None, echo=None):
    names = list(CRITERIA) if not only else list(only)
    unknown = [n for n in names if n not in CRITERIA]
    if unknown:
        raise KeyError(f"unknown criteria {unknown}; choose from {list(CRITERIA)}")
    results = []
    for n in names:
        res = run_criterion(n, families, settings)
        if echo:
            echo(res.line())
        results.append(res)
    return results
