"""Time the hot kernels under numba and under the pure-numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 3] [--json out.json]

Each backend runs in its own interpreter because the switch
(``CCGEO_DISABLE_NUMBA``) is read at import time.  numba timings exclude the
first call, which pays for compilation (or the on-disk cache load).
"""

import argparse
import json
import os
import subprocess
import sys
import time
from pathlib import Path

SRC = Path(__file__).resolve().parents[1] / "src"


def workloads():
    import numpy as np

    from ccgeo import fields as F
    from ccgeo import flows as FL
    from ccgeo import metrics as MT
    from ccgeo import multilinear as ml
    from ccgeo import pullback as PB

    b = F.generate_commutators(F.builtin_family("heisenberg"))
    x = np.zeros(3)
    I = ml.select_maximal_tuple(b, x, 0.1)
    emap = FL.EMap(b, I, x, 0.1)
    H = np.random.default_rng(0).uniform(-0.1, 0.1, (400, 3))
    paths = MT.sample_ball(b, x, 0.01, "rho", 3, seed=1).paths
    return {
        "E batch (400 points)": lambda: emap.batch(H),
        "flow_combination x50": lambda: [FL.flow_combination(h, b, x, 1.0) for h in np.linspace(0.1, 0.5, 50)[:, None] * np.ones(b.q)],
        "sample_ball N=400": lambda: MT.sample_ball(b, x, 0.1, "cc", 400, seed=2),
        "map_Psi x5": lambda: [PB.map_Psi(b, I, x, 0.1, h, 0.5 * h) for h in H[:5] * 0.3],
        "lift 3 paths": lambda: [PB.lift_path(b, I, x, 0.1, p) for p in paths],
        "rho distance, 1 target": lambda: MT.reach_upper(b, x, emap(H[0]), "rho"),
    }


def child(repeat):
    from ccgeo import BACKEND

    out = {}
    for name, fn in workloads().items():
        fn()  # warm-up / compile
        best = float("inf")
        for _ in range(repeat):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        out[name] = best
    print(json.dumps({"backend": BACKEND, "timings": out}))


def spawn(disable, repeat):
    env = dict(os.environ, CCGEO_DISABLE_NUMBA="1" if disable else "0")
    env["PYTHONPATH"] = os.pathsep.join([str(SRC), env.get("PYTHONPATH", "")])
    proc = subprocess.run([sys.executable, __file__, "--child", "--repeat", str(repeat)], env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", help="also write the timings here")
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.child:
        child(args.repeat)
        return
    fast, slow = spawn(False, args.repeat), spawn(True, args.repeat)
    width = max(map(len, fast["timings"]))
    print(f"{'workload':<{width}}  {'numba [s]':>10}  {'numpy [s]':>10}  {'speed-up':>8}")
    for name, t in fast["timings"].items():
        s = slow["timings"][name]
        print(f"{name:<{width}}  {t:>10.4f}  {s:>10.4f}  {s / t:>7.1f}x")
    if args.json:
        Path(args.json).write_text(json.dumps({"numba": fast, "numpy": slow}, indent=2) + "\n")


if __name__ == "__main__":
    main()
