"""Optional numba acceleration.

Kernels are written as plain loops that numba can compile.  Set
``SEMSIM_DISABLE_NUMBA=1`` to force the pure-numpy fallback path (also used
automatically when numba is not importable).
"""
import os

_disabled = os.environ.get("SEMSIM_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _disabled:
        raise ImportError
    from numba import njit as _njit
    USING_NUMBA = True
except ImportError:
    USING_NUMBA = False


def njit(fn):
    """Compile ``fn`` in nopython mode when numba is active, else return it unchanged."""
    if USING_NUMBA:
        return _njit(cache=True)(fn)
    return fn


def backend_name():
    return "numba" if USING_NUMBA else "numpy"
