"""Prints a JSON digest of kernel outputs; run once per backend."""

import json

import numpy as np

from ccgeo import BACKEND
from ccgeo import fields as F
from ccgeo import flows as FL
from ccgeo import metrics as MT
from ccgeo import multilinear as ml
from ccgeo import pullback as PB


def main():
    out = {"backend": BACKEND}
    for name in ("heisenberg", "martinet"):
        b = F.generate_commutators(F.builtin_family(name))
        x = np.asarray(F.DEFAULT_POINTS[name], dtype=float)
        I = ml.select_maximal_tuple(b, x, 0.1)
        h = np.array([0.05, -0.04, 0.003])
        out[f"{name}/E"] = FL.map_E(b, I, x, 0.1, h).tolist()
        out[f"{name}/flow"] = FL.flow_combination(np.linspace(0.1, 0.3, b.q), b, x, 0.5).tolist()
        pf = PB.PullbackFrame(b, I, x, 0.1)
        out[f"{name}/A"] = np.asarray(pf.A(np.array([0.05, 0.02, -0.03]))).tolist()
        out[f"{name}/psi"] = PB.map_Psi(b, I, x, 0.1, [0.05, -0.1, 0.02], [0.01, 0.02, -0.01]).tolist()
        path = MT.sample_ball(b, x, 0.02, "rho", 1, seed=5).paths[0]
        out[f"{name}/lift"] = PB.lift_path(b, I, x, 0.1, path).endpoint.tolist()
        out[f"{name}/reach"] = MT.reach_upper(b, x, FL.map_E(b, I, x, 0.1, h), "rho").radius
    print(json.dumps(out))


if __name__ == "__main__":
    main()
