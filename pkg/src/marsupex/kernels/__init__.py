"""Hot loops behind the geometry and planning code.

The active implementation is chosen once at import from ``MARSUPEX_BACKEND``
(see ``marsupex._backend``); both modules stay importable for comparison.
"""
from __future__ import annotations

from .._backend import BACKEND
from . import _numpy as numpy_impl

if BACKEND == "numba":
    from . import _numba as active
else:
    active = numpy_impl

UNKNOWN = 0
FREE = 1
OCCUPIED = 2

raycast = active.raycast
integrate = active.integrate
gain = active.gain
gain_many = active.gain_many
capsule_clear = active.capsule_clear
support_top = active.support_top
ground_clear = active.ground_clear

__all__ = [
    "BACKEND", "UNKNOWN", "FREE", "OCCUPIED", "active", "numpy_impl",
    "raycast", "integrate", "gain", "gain_many", "capsule_clear",
    "support_top", "ground_clear",
]
