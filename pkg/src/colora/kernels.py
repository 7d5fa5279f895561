"""Backend selection for the hot loops.

The compiled extension is preferred; ``COLORA_PURE_PYTHON=1`` or a missing
build falls back to the numpy implementation. ``BACKEND`` names the one in use.
"""
from __future__ import annotations

import os

from colora import _pykernels

if os.environ.get("COLORA_PURE_PYTHON") == "1":
    _impl = _pykernels
else:
    try:
        from colora import _ckernels as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "numpy"

im2col = _impl.im2col
col2im = _impl.col2im
upsample2x = _impl.upsample2x
upsample2x_backward = _impl.upsample2x_backward
avgpool2x = _impl.avgpool2x
avgpool2x_backward = _impl.avgpool2x_backward


def backends():
    """Map of available backend name -> module, for tests and benchmarks."""
    found = {"numpy": _pykernels}
    try:
        from colora import _ckernels
    except ImportError:
        pass
    else:
        found["cython"] = _ckernels
    return found
