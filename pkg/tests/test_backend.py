import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

PROBE = Path(__file__).with_name("backend_probe.py")


def _run(disable):
    env = dict(os.environ, CCGEO_DISABLE_NUMBA="1" if disable else "0")
    env["PYTHONPATH"] = os.pathsep.join([str(PROBE.parents[1] / "src"), env.get("PYTHONPATH", "")])
    out = subprocess.run([sys.executable, str(PROBE)], env=env, capture_output=True, text=True, timeout=1200, check=True)
    return json.loads(out.stdout)


@pytest.mark.slow
def test_numba_and_numpy_backends_agree():
    fast, slow = _run(False), _run(True)
    assert fast.pop("backend") == "numba"
    assert slow.pop("backend") == "numpy"
    assert fast.keys() == slow.keys()
    for key in fast:
        tol = 1e-4 if key.endswith("reach") else 1e-9
        np.testing.assert_allclose(fast[key], slow[key], rtol=tol, atol=tol * 1e-2, err_msg=key)
