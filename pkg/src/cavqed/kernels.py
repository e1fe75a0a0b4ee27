"""Selects the compiled propagation kernel, falling back to numpy.

Set ``CAVQED_PURE_PYTHON=1`` before import to force the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
rk4_propagate = _kernels_py.rk4_propagate

if os.environ.get("CAVQED_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        rk4_propagate = _compiled.rk4_propagate
        BACKEND = "compiled"

__all__ = ["BACKEND", "rk4_propagate", "python_rk4_propagate", "compiled_rk4_propagate"]

python_rk4_propagate = _kernels_py.rk4_propagate


def compiled_rk4_propagate():
    """Return the compiled kernel or ``None`` when it is not built."""
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels.rk4_propagate
