"""Backend selection for the nodal stencil kernels.

The compiled extension is used when it imports; otherwise the NumPy
fallback is used. Setting ``RADGRAPH_PURE_PYTHON=1`` forces the fallback.
"""

import os

from . import _kernels_py

if os.environ.get("RADGRAPH_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

circle_derivatives = _impl.circle_derivatives
sphere_derivatives = _impl.sphere_derivatives
block2 = _impl.block2

__all__ = ["BACKEND", "circle_derivatives", "sphere_derivatives", "block2"]
