"""Optional numba acceleration.

Kernels are written once in loop form. With numba available they are compiled
with ``@njit``; setting ``MIXEDFLEET_DISABLE_NUMBA=1`` (or running without
numba installed) falls back to executing the same functions as plain
Python/numpy, which is slow but handy for debugging and for the benchmark.
"""

import os

_disabled = os.environ.get("MIXEDFLEET_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes"}

try:
    if _disabled:
        raise ImportError
    import numba

    NUMBA_ENABLED = True
except ImportError:  # pragma: no cover - exercised by the fallback benchmark
    numba = None
    NUMBA_ENABLED = False


def maybe_njit(func):
    if NUMBA_ENABLED:
        return numba.njit(cache=True)(func)
    return func
