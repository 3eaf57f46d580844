"""Numba switch.

Hot kernels are written twice: a loop version compiled with numba and a
vectorised numpy version.  Setting ``MOLMIMO_DISABLE_NUMBA=1`` in the
environment (or running without numba installed) selects the numpy path.
Both paths consume identical random inputs and produce identical outputs.
"""
import os

_FLAG = os.environ.get("MOLMIMO_DISABLE_NUMBA", "").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and _FLAG not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise an identity decorator."""
    if numba is None:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn
    return numba.njit(*args, **kwargs)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
