"""Backend selection for the numeric kernels.

Set ``CCGEO_DISABLE_NUMBA=1`` to run every kernel as plain Python/numpy.
``CCGEO_THREADS`` caps the numba thread pool.
"""

import os

_FALSY = {"", "0", "false", "no", "off"}


def _env_flag(name):
    return os.environ.get(name, "").strip().lower() not in _FALSY


try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

NUMBA_ENABLED = numba is not None and not _env_flag("CCGEO_DISABLE_NUMBA")
BACKEND = "numba" if NUMBA_ENABLED else "numpy"

if NUMBA_ENABLED and os.environ.get("CCGEO_THREADS"):
    try:
        numba.set_num_threads(max(1, min(int(os.environ["CCGEO_THREADS"]), numba.config.NUMBA_NUM_THREADS)))
    except ValueError:
        pass


def jit(fn):
    if NUMBA_ENABLED:
        return numba.njit(cache=True)(fn)
    return fn
