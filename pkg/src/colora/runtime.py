"""Process-wide execution settings.

``COLORA_REFERENCE_MODE=1`` pins BLAS/OpenMP pools to a single thread so that
every reduction runs in a fixed order and repeated runs are bit-identical.
"""
from __future__ import annotations

import os

_limiter = None


def reference_mode() -> bool:
    return os.environ.get("COLORA_REFERENCE_MODE") == "1"


def apply_reference_mode(force: bool = False) -> bool:
    """Limit native thread pools to one thread if reference mode is requested."""
    global _limiter
    if not (force or reference_mode()):
        return False
    if _limiter is None:
        from threadpoolctl import threadpool_limits

        _limiter = threadpool_limits(limits=1)
    return True
