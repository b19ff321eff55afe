"""Kernel backend selection.

The compiled extension is used when it is importable; set
``STATECC_PURE_PYTHON=1`` to force the NumPy fallback.
"""

import os

from . import _kernels_py

if os.environ.get("STATECC_PURE_PYTHON"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

waterfill_levels = _impl.waterfill_levels
waterfill_power = _impl.waterfill_power

__all__ = ["BACKEND", "waterfill_levels", "waterfill_power"]
