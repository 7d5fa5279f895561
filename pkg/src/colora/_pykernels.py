"""Pure-numpy implementations of the hot loops.

Used whenever the compiled ``_ckernels`` extension is unavailable, or when
``COLORA_PURE_PYTHON=1`` is set. Results match the compiled path bit for bit:
the 2x2 sums use the same pairing, and im2col/col2im only move data
(col2im accumulates offsets in the same (c, u, v) order).
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(xp: np.ndarray, k: int, h: int, w: int) -> np.ndarray:
    """Padded ``[n, c, h+k-1, w+k-1]`` -> columns ``[c*k*k, n*h*w]``."""
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # n, c, h, w, k, k
    return np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(c * k * k, n * h * w)


def col2im(cols: np.ndarray, n: int, c: int, h: int, w: int, k: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add columns into a padded image."""
    out = np.zeros((n, c, h + k - 1, w + k - 1), dtype=cols.dtype)
    blocks = cols.reshape(c, k, k, n, h, w).transpose(3, 0, 1, 2, 4, 5)
    for u in range(k):
        for v in range(k):
            out[:, :, u:u + h, v:v + w] += blocks[:, :, u, v]
    return out


def upsample2x(x: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def _sum2(g: np.ndarray) -> np.ndarray:
    return (g[:, :, 0::2, 0::2] + g[:, :, 0::2, 1::2]) + (g[:, :, 1::2, 0::2] + g[:, :, 1::2, 1::2])


def upsample2x_backward(g: np.ndarray) -> np.ndarray:
    return _sum2(g)


def avgpool2x(x: np.ndarray) -> np.ndarray:
    return _sum2(x) * x.dtype.type(0.25)


def avgpool2x_backward(g: np.ndarray) -> np.ndarray:
    out = upsample2x(g)
    out *= g.dtype.type(0.25)
    return out
