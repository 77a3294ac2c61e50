"""Kernel backend selection.

Numba is used when importable unless ``RDA_DISABLE_NUMBA`` is set to a truthy
value, in which case every kernel falls back to its pure-numpy twin.  The
choice is made once, at import time.
"""

import os

_FLAG = os.environ.get("RDA_DISABLE_NUMBA", "").strip().lower()

USE_NUMBA = _FLAG not in ("1", "true", "yes", "on")
if USE_NUMBA:
    try:
        import numba  # noqa: F401
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USE_NUMBA = False

BACKEND = "numba" if USE_NUMBA else "numpy"
