# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled loops behind conv2d and the 2x resampling ops.

Same contract as ``_pykernels``: inputs are C-contiguous 4-D arrays, outputs
are freshly allocated with the input dtype. Every accumulation runs in a fixed
loop order so results do not depend on scheduling.
"""
import numpy as np

ctypedef fused real:
    float
    double


def _im2col(real[:, :, :, ::1] xp, real[:, ::1] out, Py_ssize_t k,
            Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t n, c, u, v, y, x, row, base
    cdef Py_ssize_t N = xp.shape[0], C = xp.shape[1], hw = h * w
    with nogil:
        for c in range(C):
            for u in range(k):
                for v in range(k):
                    row = (c * k + u) * k + v
                    for n in range(N):
                        base = n * hw
                        for y in range(h):
                            for x in range(w):
                                out[row, base + y * w + x] = xp[n, c, y + u, x + v]


def im2col(xp, int k, int h, int w):
    """Padded ``[n, c, h+k-1, w+k-1]`` -> columns ``[c*k*k, n*h*w]``."""
    n, c = xp.shape[0], xp.shape[1]
    out = np.empty((c * k * k, n * h * w), dtype=xp.dtype)
    _im2col(xp, out, k, h, w)
    return out


def _col2im(real[:, ::1] cols, real[:, :, :, ::1] out, Py_ssize_t k,
            Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t n, c, u, v, y, x, row, base
    cdef Py_ssize_t N = out.shape[0], C = out.shape[1], hw = h * w
    with nogil:
        for c in range(C):
            for u in range(k):
                for v in range(k):
                    row = (c * k + u) * k + v
                    for n in range(N):
                        base = n * hw
                        for y in range(h):
                            for x in range(w):
                                out[n, c, y + u, x + v] += cols[row, base + y * w + x]


def col2im(cols, int n, int c, int h, int w, int k):
    """Adjoint of :func:`im2col`: scatter-add columns into a padded image."""
    out = np.zeros((n, c, h + k - 1, w + k - 1), dtype=cols.dtype)
    _col2im(cols, out, k, h, w)
    return out


def _up2(real[:, :, :, ::1] x, real[:, :, :, ::1] out):
    cdef Py_ssize_t n, c, y, xx
    cdef real val
    with nogil:
        for n in range(x.shape[0]):
            for c in range(x.shape[1]):
                for y in range(x.shape[2]):
                    for xx in range(x.shape[3]):
                        val = x[n, c, y, xx]
                        out[n, c, 2 * y, 2 * xx] = val
                        out[n, c, 2 * y, 2 * xx + 1] = val
                        out[n, c, 2 * y + 1, 2 * xx] = val
                        out[n, c, 2 * y + 1, 2 * xx + 1] = val


def upsample2x(x):
    out = np.empty((x.shape[0], x.shape[1], 2 * x.shape[2], 2 * x.shape[3]), dtype=x.dtype)
    _up2(x, out)
    return out


def _sum2(real[:, :, :, ::1] g, real[:, :, :, ::1] out, real scale):
    cdef Py_ssize_t n, c, y, xx
    with nogil:
        for n in range(out.shape[0]):
            for c in range(out.shape[1]):
                for y in range(out.shape[2]):
                    for xx in range(out.shape[3]):
                        out[n, c, y, xx] = ((g[n, c, 2 * y, 2 * xx] + g[n, c, 2 * y, 2 * xx + 1])
                                            + (g[n, c, 2 * y + 1, 2 * xx] + g[n, c, 2 * y + 1, 2 * xx + 1])) * scale


def upsample2x_backward(g):
    out = np.empty((g.shape[0], g.shape[1], g.shape[2] // 2, g.shape[3] // 2), dtype=g.dtype)
    _sum2(g, out, 1.0)
    return out


def avgpool2x(x):
    out = np.empty((x.shape[0], x.shape[1], x.shape[2] // 2, x.shape[3] // 2), dtype=x.dtype)
    _sum2(x, out, 0.25)
    return out


def avgpool2x_backward(g):
    out = upsample2x(g)
    out *= 0.25
    return out
