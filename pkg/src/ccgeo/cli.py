"""``ccgeo`` experiment runner.

Each subcommand resolves an :class:`ExperimentConfig` from an optional JSON
file plus command-line flags, runs one computation, prints a JSON summary and,
with ``--out``, writes ``report.json`` (and ``data.csv`` where there is bulk
data).  Exit codes: 0 success, 2 a falsified inclusion or failed criterion,
1 usage or tool error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields as dc_fields
from pathlib import Path

import numpy as np

from . import __version__
from . import acceptance as AC
from . import fields as F
from . import flows as FL
from . import measures as MS
from . import metrics as MT
from . import multilinear as ml
from . import pullback as PB
from ._accel import BACKEND
from .errors import CcgeoError

EXIT_OK, EXIT_ERROR, EXIT_FALSIFIED = 0, 1, 2

SUBCOMMANDS = (
    "flow", "exp-ap", "map-e", "map-phi", "maximal-tuple", "chi", "a-ode", "lift",
    "injectivity", "distance", "sample-ball", "ballbox", "doubling", "poincare", "suite",
)


class UsageError(Exception):
    pass


@dataclass
class ExperimentConfig:
    family: object = None  # built-in name, JSON path or inline dict
    tuple: list | None = None
    point: list | None = None
    radius: float = 0.1
    epsilon: float | None = None
    metric: str = "cc"
    samples: int | None = None
    seed: int = 0
    only: list | None = None
    options: dict = field(default_factory=dict)  # subcommand-specific

    @classmethod
    def keys(cls):
        return {f.name for f in dc_fields(cls)}

    def validate(self, command):
        if command != "suite" and self.family is None:
            raise UsageError("--family is required")
        if self.radius is None or not self.radius > 0:
            raise UsageError(f"radius must be positive, got {self.radius}")
        if self.epsilon is not None and not 0 < self.epsilon <= 1:
            raise UsageError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if self.metric not in MT.METRICS:
            raise UsageError(f"metric must be one of {MT.METRICS}")
        if self.samples is not None and self.samples < 1:
            raise UsageError("samples must be positive")


def _floats(text):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _parse_option(item):
    if "=" not in item:
        raise UsageError(f"--arg expects KEY=VALUE, got {item!r}")
    k, v = item.split("=", 1)
    try:
        return k.strip(), json.loads(v)
    except json.JSONDecodeError:
        return k.strip(), v


def load_config(args) -> ExperimentConfig:
    doc = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        unknown = set(doc) - ExperimentConfig.keys()
        if unknown:
            raise UsageError(f"unknown config key(s): {sorted(unknown)}")
    cfg = ExperimentConfig(**doc)
    if args.family is not None:
        cfg.family = args.family
    if args.tuple is not None:
        cfg.tuple = [int(v) for v in _floats(args.tuple)]
    if args.point is not None:
        cfg.point = _floats(args.point)
    for key in ("radius", "epsilon", "metric", "samples", "seed"):
        val = getattr(args, key)
        if val is not None:
            setattr(cfg, key, val)
    if args.only:
        cfg.only = list(args.only)
    cfg.options = dict(cfg.options)
    for item in args.arg or ():
        k, v = _parse_option(item)
        cfg.options[k] = v
    if cfg.point is not None:
        cfg.point = _floats(cfg.point)
    return cfg


# -- JSON / CSV -------------------------------------------------------------------------


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, ml.TupleIndex):
        return list(obj.indices)
    return obj


def write_outputs(out_dir, report, rows=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(jsonable(report), sort_keys=True, indent=2) + "\n")
    if rows:
        header, body = rows
        with open(out / "data.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(body)


# -- context ------------------------------------------------------------------------------


class Context:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        fam = F.load_family(cfg.family)
        self.basis = F.generate_commutators(fam)
        n = self.basis.dim
        if cfg.point is None:
            self.x = np.array(F.DEFAULT_POINTS.get(fam.name, [0.0] * n), dtype=float)
        else:
            self.x = np.array(cfg.point, dtype=float)
        if self.x.size != n:
            raise UsageError(f"point has {self.x.size} coordinates, family dimension is {n}")
        if not fam.contains(self.x):
            raise UsageError(f"point {self.x.tolist()} lies outside the domain box")
        self.r = float(cfg.radius)

    @property
    def tuple(self):
        if self.cfg.tuple:
            return ml.TupleIndex.from_basis(self.basis, self.cfg.tuple)
        return ml.select_maximal_tuple(self.basis, self.x, self.r)

    def opt(self, key, default=None):
        return self.cfg.options.get(key, default)

    def vec(self, key, default=None):
        v = self.opt(key, default)
        return None if v is None else np.array(_floats(v), dtype=float)


# -- subcommands -------------------------------------------------------------------------------


def cmd_flow(ctx):
    word = tuple(int(c) for c in str(ctx.opt("word", "1")))
    t = float(ctx.opt("time", 1.0))
    k = ctx.basis.index_of.get(word)
    if k is None:
        raise UsageError(f"word {word} is not a member of the commutator basis")
    y = FL.flow(ctx.basis.members[k], ctx.x, t, fam=ctx.basis.family)
    return {"word": list(word), "time": t, "endpoint": y}, None, True


def cmd_exp_ap(ctx):
    word = tuple(int(c) for c in str(ctx.opt("word", "12")))
    h = float(ctx.opt("h", 0.01))
    fam = ctx.basis.family
    y = FL.approx_exponential(word, h, ctx.x, fam)
    k = ctx.basis.index_of[word]
    exact = FL.flow(ctx.basis.members[k], ctx.x, h, fam=fam)
    hs = np.logspace(-3, -1, 7)
    slope, R = AC.remainder_slope(fam, ctx.basis, word, ctx.x, hs)
    rows = (["h", "remainder"], [[float(a), float(b)] for a, b in zip(hs, R)])
    return {"word": list(word), "h": h, "exp_ap": y, "exact_flow": exact, "remainder": float(np.linalg.norm(y - exact)), "slope": "exact" if slope is None else slope}, rows, True


def cmd_map_e(ctx):
    I = ctx.tuple
    h = ctx.vec("h", [0.0] * I.p)
    E = FL.EMap(ctx.basis, I, ctx.x, ctx.r)
    return {"tuple": I, "h": h, "E": E(h), "dE": E.jacobian(h), "box_norm": E.box_norm(h)}, None, True


def cmd_map_phi(ctx):
    I = ctx.tuple
    u = ctx.vec("u", [0.0] * I.p)
    phi = FL.PhiMap(ctx.basis, I, ctx.x, ctx.r)
    return {"tuple": I, "u": u, "Phi": phi(u), "dPhi": phi.jacobian(u)}, None, True


def cmd_maximal_tuple(ctx):
    rep = ml.select_maximal_tuple_report(ctx.basis, ctx.x, ctx.r)
    return {"maximal": rep.to_dict(), "p": rep.tuple.p, "q": ctx.basis.q, "words": [list(w) for w in ctx.basis.words]}, None, True


def cmd_chi(ctx):
    I = ctx.tuple
    fe = PB.FrameExpansion(FL.EMap(ctx.basis, I, ctx.x, ctx.r))
    eps = ctx.cfg.epsilon or PB.calibrate_eps0(fe)
    out = {"tuple": I, "eps0": eps}
    if ctx.opt("h") is not None:
        res = fe.evaluate(ctx.vec("h"))
        out.update(chi=res.chi, residual=res.residual, chi_norm=res.norm)
    fit = PB.fit_chi_bound(fe, eps, int(ctx.opt("density", 7)))
    out["fit"] = asdict(fit)
    return out, None, True


def cmd_a_ode(ctx):
    I = ctx.tuple
    pf = PB.PullbackFrame(ctx.basis, I, ctx.x, ctx.r)
    om = ctx.vec("omega", [1.0] + [0.0] * (I.p - 1))
    om = om / np.linalg.norm(om)
    rho_max = float(ctx.opt("rho_max", 2 * PB.calibrate_eta2(pf, seed=ctx.cfg.seed)))
    radii = np.linspace(0.0, rho_max, int(ctx.opt("points", 11)))
    ray = PB.solve_A_ode(ctx.basis, I, ctx.x, ctx.r, om, rho_max, radii=radii)
    errs = [float(pf.pushforward_errors(rho * om).max()) if rho > 0 else 0.0 for rho in radii]
    rows = (["rho", "A_norm", "pushforward_error"], [[float(rho), float(np.linalg.norm(A, 2)), e] for rho, A, e in zip(radii, ray.A, errs)])
    return {"tuple": I, "omega": om, "rho_max": rho_max, "A_end": ray.A[-1], "max_pushforward_error": max(errs)}, rows, True


def cmd_lift(ctx):
    I = ctx.tuple
    eps = ctx.cfg.epsilon or AC.BALLBOX_EPS
    N = ctx.cfg.samples or 20
    scale = float(ctx.opt("radius_factor", 0.5 * eps ** ctx.basis.step))
    cloud = MT.sample_ball(ctx.basis, ctx.x, scale * ctx.r, "rho", N, ctx.cfg.seed)
    emap = FL.EMap(ctx.basis, I, ctx.x, ctx.r)
    rows, worst_norm, worst_res, failed = [], 0.0, 0.0, 0
    for k, path in enumerate(cloud.paths):
        res = PB.lift_checkpoints(emap, path.checkpoints(ctx.basis, ctx.x), raise_on_fail=False)
        failed += not res.ok
        worst_norm = max(worst_norm, res.max_box_norm)
        worst_res = max(worst_res, res.max_residual)
        rows.append([k, path.digest(), bool(res.ok), float(res.max_box_norm), float(res.max_residual)])
    ok = failed == 0 and worst_norm < eps
    out = {"tuple": I, "eps": eps, "path_radius": scale * ctx.r, "paths": N, "failed": failed, "max_box_norm": worst_norm, "max_residual": worst_res}
    return out, (["path", "digest", "ok", "max_box_norm", "max_residual"], rows), ok


def cmd_injectivity(ctx):
    I = ctx.tuple
    eta3 = None
    eps1 = ctx.cfg.epsilon
    if eps1 is None:
        eta3 = PB.calibrate_eta3(ctx.basis, I, ctx.x, ctx.r)
        eps1 = eta3 / 2
    rep = PB.injectivity_check_E(ctx.basis, I, ctx.x, ctx.r, eps1, int(ctx.opt("density", 9)), raise_on_collision=False)
    return {"tuple": I, "eps1": eps1, "eta3": eta3, "report": rep.to_dict()}, None, rep.injective


def cmd_distance(ctx):
    y = ctx.vec("target")
    if y is None:
        raise UsageError("distance needs --arg target=y1,y2,...")
    res = MT.reach_upper(ctx.basis, ctx.x, y, ctx.cfg.metric, seed=ctx.cfg.seed)
    out = {"target": y, "metric": ctx.cfg.metric, **res.to_dict()}
    if res.path is not None:
        out["path"] = res.path.to_dict()
    return out, None, True


def cmd_sample_ball(ctx):
    N = ctx.cfg.samples or 200
    cloud = MT.sample_ball(ctx.basis, ctx.x, ctx.r, ctx.cfg.metric, N, ctx.cfg.seed)
    centred = cloud.points - ctx.x
    sv = np.linalg.svd(centred, compute_uv=False) if len(centred) > 1 else np.zeros(1)
    eff_rank = int(np.sum(sv > 1e-8 * max(sv[0], 1e-300)))
    return {"samples": N, "metric": ctx.cfg.metric, "verify_residual": cloud.verify(ctx.basis), "effective_rank": eff_rank}, cloud.rows(), True


def cmd_ballbox(ctx):
    I = ctx.tuple
    eps = ctx.cfg.epsilon or AC.BALLBOX_EPS
    N = ctx.cfg.samples or 200
    rep = MT.ball_box_check(ctx.basis, I, ctx.x, ctx.r, eps, N, ctx.cfg.seed, density=int(ctx.opt("density", 3)))
    d = rep.to_dict()
    ok = rep.inner_constant is not None and rep.inner_lifted == rep.inner_total and rep.outer_constant is not None and math.isfinite(rep.outer_constant)
    # inner radius is c eps^s r, i.e. C2 = 1 / c in the ball-box statement
    d["C2"] = None if not rep.inner_constant else 1.0 / rep.inner_constant
    rows = (["grid_index", "rho_over_eps_r"], [[k, v] for k, v in enumerate(rep.outer_values)])
    return {"tuple": I, **d}, rows, ok


def cmd_doubling(ctx):
    M = ctx.cfg.samples or 600
    rep = MS.doubling_ratio(ctx.basis, ctx.x, ctx.r, ctx.cfg.metric, M, ctx.cfg.seed, I=ctx.cfg.tuple and ctx.tuple)
    small, large = rep.small.sample, rep.large.sample
    rows = (
        [f"h{i + 1}" for i in range(small.h.shape[1])] + ["jac_r", "inside_r", "jac_2r", "inside_2r"],
        [[*map(float, h), float(a), bool(b), float(c), bool(d)] for h, a, b, c, d in zip(small.h, small.jac, small.inside, large.jac, large.inside)],
    )
    return {"estimate": rep.ratio, **rep.to_dict()}, rows, not rep.unreliable


def cmd_poincare(ctx):
    M = ctx.cfg.samples or 600
    rep = MS.poincare_ratio(ctx.basis, ctx.x, ctx.r, M=M, seed=ctx.cfg.seed, enlarge=float(ctx.opt("enlarge", 3.0)), metric=ctx.cfg.metric)
    rows = (["function", "lhs", "rhs", "ratio"], [[k, rep.lhs[k], rep.rhs[k], rep.ratios[k]] for k in rep.ratios])
    return {"estimate": rep.ratio, **rep.to_dict()}, rows, not rep.flagged


def cmd_suite(cfg: ExperimentConfig, out_dir):
    fams = (cfg.family,) if cfg.family else AC.BUILTINS
    for f in fams:
        if f not in AC.BUILTINS:
            raise UsageError(f"suite runs on built-in families only; got {f!r}")
    st = AC.Settings(seed=cfg.seed)
    if cfg.samples:
        st.doubling_samples = st.poincare_samples = cfg.samples
    results = AC.run_suite(cfg.only, fams, st, echo=lambda line: print(line, flush=True))
    failed = [r.name for r in results if not r.passed]
    report = {
        "command": "suite",
        "config": asdict(cfg),
        "version": __version__,
        "criteria": [{k: v for k, v in r.to_dict().items() if k != "elapsed"} for r in results],
        "failed": failed,
    }
    if out_dir:
        write_outputs(out_dir, report, (["number", "name", "passed", "summary"], [[r.number, r.name, r.passed, r.summary] for r in results]))
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed" + (f"; failed: {', '.join(failed)}" if failed else ""))
    return EXIT_OK if not failed else EXIT_FALSIFIED


HANDLERS = {
    "flow": cmd_flow, "exp-ap": cmd_exp_ap, "map-e": cmd_map_e, "map-phi": cmd_map_phi,
    "maximal-tuple": cmd_maximal_tuple, "chi": cmd_chi, "a-ode": cmd_a_ode, "lift": cmd_lift,
    "injectivity": cmd_injectivity, "distance": cmd_distance, "sample-ball": cmd_sample_ball,
    "ballbox": cmd_ballbox, "doubling": cmd_doubling, "poincare": cmd_poincare,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_ERROR)


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--family", help="built-in name or path to a family JSON document")
    common.add_argument("--config", help="JSON experiment config; flags override its values")
    common.add_argument("--point", help="base point, comma separated (use --point=-1,0 for negatives)")
    common.add_argument("--tuple", help="explicit tuple I, 1-based comma separated indices")
    common.add_argument("--radius", type=float)
    common.add_argument("--epsilon", type=float)
    common.add_argument("--metric", choices=MT.METRICS)
    common.add_argument("--samples", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="directory for report.json / data.csv")
    common.add_argument("--only", action="append", help="suite: run only this criterion (repeatable)")
    common.add_argument("--arg", action="append", metavar="KEY=VALUE", help="subcommand option, e.g. h=0.1,0,0")
    p = _Parser(prog="ccgeo", description="Control-ball geometry experiments")
    p.add_argument("--version", action="version", version=f"ccgeo {__version__} ({BACKEND})")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common])
    return p


def constants_used():
    return {
        "rank_tol": ml.DEFAULT_RANK_TOL,
        "reach_tol": MT.REACH_TOL,
        "segments": MT.SEGMENTS,
        "a_blowup": PB.A_BLOWUP,
        "ray_steps": PB.RAY_STEPS,
        "psi_steps": PB.PSI_STEPS,
        "jacobian_step": FL.JACOBIAN_STEP,
        "integrator": asdict(FL.DEFAULT_CFG),
    }


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        cfg.validate(args.command)
        if args.command == "suite":
            return cmd_suite(cfg, args.out)
        ctx = Context(cfg)
        result, rows, ok = HANDLERS[args.command](ctx)
    except UsageError as exc:
        print(f"ccgeo: usage error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (CcgeoError, KeyError, ValueError) as exc:
        print(f"ccgeo: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    report = {
        "command": args.command,
        "config": asdict(cfg),
        "family": ctx.basis.family.name,
        "point": ctx.x,
        "version": __version__,
        "constants": constants_used(),
        "result": result,
        "verdict": "ok" if ok else "falsified",
    }
    print(json.dumps(jsonable({"command": args.command, "verdict": report["verdict"], "result": result}), sort_keys=True, indent=2))
    if args.out:
        write_outputs(args.out, report, rows)
    return EXIT_OK if ok else EXIT_FALSIFIED


if __name__ == "__main__":
    sys.exit(main())
