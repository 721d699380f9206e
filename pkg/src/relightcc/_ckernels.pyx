# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_pykernels.py`` (float64 only)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()

ctypedef cnp.float64_t f64
ctypedef cnp.int64_t i64


def im2col(xp, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride, Py_ssize_t ho, Py_ssize_t wo):
    cdef const f64[:, :, :, ::1] x = np.ascontiguousarray(xp, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    out = np.empty((n, c * kh * kw, ho * wo), dtype=np.float64)
    cdef f64[:, :, ::1] o = out
    cdef Py_ssize_t b, ch, i, j, y, z, row, base
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ch * kh + i) * kw + j
                        for y in range(ho):
                            base = y * wo
                            for z in range(wo):
                                o[b, row, base + z] = x[b, ch, y * stride + i, z * stride + j]
    return out


def col2im(cols, Py_ssize_t n, Py_ssize_t c, Py_ssize_t hp, Py_ssize_t wp,
           Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride, Py_ssize_t ho, Py_ssize_t wo):
    cdef const f64[:, :, ::1] cv = np.ascontiguousarray(cols, dtype=np.float64).reshape(n, c * kh * kw, ho * wo)
    out = np.zeros((n, c, hp, wp), dtype=np.float64)
    cdef f64[:, :, :, ::1] o = out
    cdef Py_ssize_t b, ch, i, j, y, z, row, base
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ch * kh + i) * kw + j
                        for y in range(ho):
                            base = y * wo
                            for z in range(wo):
                                o[b, ch, y * stride + i, z * stride + j] += cv[b, row, base + z]
    return out


def maxpool_forward(xin, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t ho, Py_ssize_t wo):
    cdef const f64[:, :, :, ::1] x = np.ascontiguousarray(xin, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    best = np.empty((n, c, ho, wo), dtype=np.float64)
    arg = np.empty((n, c, ho, wo), dtype=np.int64)
    cdef f64[:, :, :, ::1] bv = best
    cdef i64[:, :, :, ::1] av = arg
    cdef Py_ssize_t b, ch, y, z, i, j
    cdef f64 m, v
    cdef i64 a
    with nogil:
        for b in range(n):
            for ch in range(c):
                for y in range(ho):
                    for z in range(wo):
                        m = x[b, ch, y * stride, z * stride]
                        a = 0
                        for i in range(k):
                            for j in range(k):
                                v = x[b, ch, y * stride + i, z * stride + j]
                                if v > m:
                                    m = v
                                    a = i * k + j
                        bv[b, ch, y, z] = m
                        av[b, ch, y, z] = a
    return best, arg


def maxpool_backward(gin, argin, Py_ssize_t h, Py_ssize_t w, Py_ssize_t k, Py_ssize_t stride):
    cdef const f64[:, :, :, ::1] g = np.ascontiguousarray(gin, dtype=np.float64)
    cdef const i64[:, :, :, ::1] a = np.ascontiguousarray(argin, dtype=np.int64)
    cdef Py_ssize_t n = g.shape[0], c = g.shape[1], ho = g.shape[2], wo = g.shape[3]
    out = np.zeros((n, c, h, w), dtype=np.float64)
    cdef f64[:, :, :, ::1] o = out
    cdef Py_ssize_t b, ch, y, z, off
    with nogil:
        for b in range(n):
            for ch in range(c):
                for y in range(ho):
                    for z in range(wo):
                        off = a[b, ch, y, z]
                        o[b, ch, y * stride + off // k, z * stride + off % k] += g[b, ch, y, z]
    return out


def bilinear_sample(imgin, ysin, xsin):
    cdef const f64[:, :, ::1] img = np.ascontiguousarray(imgin, dtype=np.float64)
    cdef const f64[:, ::1] ys = np.ascontiguousarray(ysin, dtype=np.float64)
    cdef const f64[:, ::1] xs = np.ascontiguousarray(xsin, dtype=np.float64)
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1], nc = img.shape[2]
    cdef Py_ssize_t ho = ys.shape[0], wo = ys.shape[1]
    out = np.empty((ho, wo, nc), dtype=np.float64)
    cdef f64[:, :, ::1] o = out
    cdef Py_ssize_t u, v, ch, y0, x0, y1, x1
    cdef f64 yy, xx, fy, fx
    with nogil:
        for u in range(ho):
            for v in range(wo):
                yy = ys[u, v]
                xx = xs[u, v]
                if yy < 0.0:
                    yy = 0.0
                elif yy > h - 1.0:
                    yy = h - 1.0
                if xx < 0.0:
                    xx = 0.0
                elif xx > w - 1.0:
                    xx = w - 1.0
                y0 = <Py_ssize_t>floor(yy)
                x0 = <Py_ssize_t>floor(xx)
                if y0 > h - 1:
                    y0 = h - 1
                if x0 > w - 1:
                    x0 = w - 1
                y1 = y0 + 1 if y0 + 1 < h else h - 1
                x1 = x0 + 1 if x0 + 1 < w else w - 1
                fy = yy - y0
                fx = xx - x0
                for ch in range(nc):
                    o[u, v, ch] = ((img[y0, x0, ch] * (1.0 - fx) + img[y0, x1, ch] * fx) * (1.0 - fy)
                                   + (img[y1, x0, ch] * (1.0 - fx) + img[y1, x1, ch] * fx) * fy)
    return out
