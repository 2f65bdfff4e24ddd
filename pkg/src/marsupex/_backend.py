"""Kernel backend selection.

``MARSUPEX_BACKEND=numpy`` forces the pure-numpy kernels; anything else (or
unset) uses numba when it imports cleanly.
"""
from __future__ import annotations

import os

try:
    import numba as nb

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    nb = None
    HAVE_NUMBA = False

REQUESTED = os.environ.get("MARSUPEX_BACKEND", "numba").strip().lower()
BACKEND = "numba" if (HAVE_NUMBA and REQUESTED != "numpy") else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAVE_NUMBA:
        return nb.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda func: func
