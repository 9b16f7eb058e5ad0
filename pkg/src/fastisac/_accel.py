"""Numba switch for the hot kernels.

Set ``FASTISAC_DISABLE_NUMBA=1`` to run every kernel on its pure-numpy /
pure-Python path. Both paths produce identical results; the flag only
changes speed.
"""

import os

_FLAG = os.environ.get("FASTISAC_DISABLE_NUMBA", "").strip().lower()

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def jit(fn):
    """Compile ``fn`` with ``numba.njit`` when enabled, else return it as-is.

    The undecorated function stays reachable as ``.py_func`` in both cases so
    tests and benchmarks can compare the two paths.
    """
    if USE_NUMBA:
        compiled = numba.njit(cache=True)(fn)
        return compiled
    fn.py_func = fn
    return fn
