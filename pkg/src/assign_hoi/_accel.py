"""Optional numba acceleration.

Set ``ASSIGN_HOI_NUMBA=0`` to force the pure-numpy kernels even when numba
is importable. The flag is read once, at import time.
"""
import os

_FLAG = os.environ.get("ASSIGN_HOI_NUMBA", "1").strip().lower()
_REQUESTED = _FLAG not in ("0", "false", "no", "off")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - depends on environment
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _REQUESTED


def njit(func):
    """Compile ``func`` in nopython mode, or return it untouched."""
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True)(func)
