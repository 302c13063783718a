"""Backend switch for the compiled kernels.

Set ``REBALANCE_BACKEND=numpy`` (or ``REBALANCE_DISABLE_NUMBA=1``) before import
to force the pure-numpy code paths. Both paths produce bit-identical results.
"""
import os

_requested = os.environ.get("REBALANCE_BACKEND", "numba").strip().lower()
if os.environ.get("REBALANCE_DISABLE_NUMBA", "").strip() not in ("", "0"):
    _requested = "numpy"

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and _requested != "numpy"
BACKEND = "numba" if USE_NUMBA else "numpy"


def njit(func):
    """``numba.njit(cache=True, nogil=True)`` when numba is importable, identity otherwise."""
    if numba is None:  # pragma: no cover
        return func
    return numba.njit(cache=True, nogil=True)(func)
