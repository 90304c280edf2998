# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled patch extraction kernels; layouts match ``_pykernels`` exactly."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline Py_ssize_t _out(Py_ssize_t size, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad):
    return (size + 2 * pad - k) // stride + 1


def im2col(x, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride, Py_ssize_t pad):
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], w = xv.shape[3]
    cdef Py_ssize_t ho = _out(h, kh, stride, pad), wo = _out(w, kw, stride, pad)
    out = np.empty((c * kh * kw, n * ho * wo), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t ci, i, j, b, y, xx, row, col, sy, sx
    for ci in range(c):
        for i in range(kh):
            for j in range(kw):
                row = (ci * kh + i) * kw + j
                col = 0
                for b in range(n):
                    for y in range(ho):
                        sy = y * stride + i - pad
                        if sy < 0 or sy >= h:
                            for xx in range(wo):
                                ov[row, col] = 0.0
                                col += 1
                            continue
                        for xx in range(wo):
                            sx = xx * stride + j - pad
                            if sx < 0 or sx >= w:
                                ov[row, col] = 0.0
                            else:
                                ov[row, col] = xv[b, ci, sy, sx]
                            col += 1
    return out


def col2im(cols, shape, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n = shape[0], c = shape[1], h = shape[2], w = shape[3]
    cdef Py_ssize_t ho = _out(h, kh, stride, pad), wo = _out(w, kw, stride, pad)
    cdef double[:, ::1] cv = np.ascontiguousarray(cols, dtype=np.float64).reshape(
        c * kh * kw, n * ho * wo)
    out = np.zeros((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] ov = out
    cdef Py_ssize_t ci, i, j, b, y, xx, row, col, sy, sx
    for ci in range(c):
        for i in range(kh):
            for j in range(kw):
                row = (ci * kh + i) * kw + j
                col = 0
                for b in range(n):
                    for y in range(ho):
                        sy = y * stride + i - pad
                        if sy < 0 or sy >= h:
                            col += wo
                            continue
                        for xx in range(wo):
                            sx = xx * stride + j - pad
                            if sx >= 0 and sx < w:
                                ov[b, ci, sy, sx] += cv[row, col]
                            col += 1
    return out


def upsample2x(x):
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], w = xv.shape[3]
    out = np.empty((n, c, 2 * h, 2 * w), dtype=np.float64)
    cdef double[:, :, :, ::1] ov = out
    cdef Py_ssize_t b, ci, y, xx
    cdef double v
    for b in range(n):
        for ci in range(c):
            for y in range(h):
                for xx in range(w):
                    v = xv[b, ci, y, xx]
                    ov[b, ci, 2 * y, 2 * xx] = v
                    ov[b, ci, 2 * y, 2 * xx + 1] = v
                    ov[b, ci, 2 * y + 1, 2 * xx] = v
                    ov[b, ci, 2 * y + 1, 2 * xx + 1] = v
    return out


def sumpool2x(x):
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], c = xv.shape[1], h = xv.shape[2] // 2, w = xv.shape[3] // 2
    out = np.empty((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] ov = out
    cdef Py_ssize_t b, ci, y, xx
    for b in range(n):
        for ci in range(c):
            for y in range(h):
                for xx in range(w):
                    ov[b, ci, y, xx] = ((xv[b, ci, 2 * y, 2 * xx] + xv[b, ci, 2 * y, 2 * xx + 1])
                                        + (xv[b, ci, 2 * y + 1, 2 * xx]
                                           + xv[b, ci, 2 * y + 1, 2 * xx + 1]))
    return out
