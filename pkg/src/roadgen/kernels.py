"""Kernel backend selection.

The compiled extension is used when it was built; otherwise (or when
``ROADGEN_PURE_PYTHON=1``) the numpy fallback is used. Both expose the same
functions with identical results.
"""

from __future__ import annotations

import os

from . import _fallback

python_backend = _fallback

try:
    from . import _kernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if compiled_backend is not None and os.environ.get("ROADGEN_PURE_PYTHON", "") in ("", "0"):
    active = compiled_backend
    BACKEND = "cython"
else:
    active = python_backend
    BACKEND = "python"

scatter_add_compensated = active.scatter_add_compensated
warp_bilinear = active.warp_bilinear
warp_nearest = active.warp_nearest

__all__ = [
    "BACKEND",
    "compiled_backend",
    "python_backend",
    "scatter_add_compensated",
    "warp_bilinear",
    "warp_nearest",
]
