"""Kernel backend selection.

The compiled extension is used when it imports cleanly; otherwise the numpy
fallback is used. Setting ``SKELFLOW_PURE_PYTHON=1`` forces the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("SKELFLOW_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"


def compiled_available() -> bool:
    try:
        from . import _kernels  # noqa: F401  # type: ignore[attr-defined]
    except ImportError:
        return False
    return True


im2col3d = _impl.im2col3d
col2im3d = _impl.col2im3d
maxpool3d_forward = _impl.maxpool3d_forward
maxpool3d_backward = _impl.maxpool3d_backward
