"""Optional numba acceleration.

Set ``MASKCODEC_NUMBA=0`` in the environment to run every kernel through its
pure Python/numpy path. Both paths are bit-identical; the flag only trades
compile time for per-call speed.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and os.environ.get("MASKCODEC_NUMBA", "1") != "0"


def maybe_njit(func):
    """Compile ``func`` with ``numba.njit`` when enabled, else return it as is.

    The undecorated function stays reachable as ``.py_func`` either way so
    tests can compare both paths.
    """
    if USE_NUMBA:
        jitted = numba.njit(cache=True)(func)
        return jitted
    func.py_func = func
    return func
