# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels in ``_fallback``."""

import numpy as np
from libc.math cimport sqrt, atan2, M_PI


def multiplicative_step(x, lin, den, neg=None, double eta=1e-12):
    cdef const double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[:, ::1] lv = np.ascontiguousarray(lin, dtype=np.float64)
    cdef const double[:, ::1] dv = np.ascontiguousarray(den, dtype=np.float64)
    cdef const double[:, ::1] nv
    cdef Py_ssize_t rows = xv.shape[0], cols = xv.shape[1], i, j
    cdef bint has_neg = neg is not None
    if lv.shape[0] != rows or lv.shape[1] != cols or dv.shape[0] != rows or dv.shape[1] != cols:
        raise ValueError("multiplicative_step: shape mismatch")
    if has_neg:
        nv = np.ascontiguousarray(neg, dtype=np.float64)
        if nv.shape[0] != rows or nv.shape[1] != cols:
            raise ValueError("multiplicative_step: shape mismatch")
    out = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef double l, num, dd, ratio
    with nogil:
        for i in range(rows):
            for j in range(cols):
                l = lv[i, j]
                if l > 0:
                    num = l
                    dd = dv[i, j] + eta
                else:
                    num = 0.0
                    dd = dv[i, j] - l + eta
                if has_neg:
                    num = num + nv[i, j]
                ratio = num / dd
                ov[i, j] = xv[i, j] * sqrt(sqrt(ratio))
    return out


cdef inline double _angle(const double[:, :, ::1] img, Py_ssize_t y, Py_ssize_t x,
                          double[::1] c, double c_norm) noexcept nogil:
    cdef Py_ssize_t k, b = c.shape[0]
    cdef double p_norm = 0.0, d2 = 0.0, s2 = 0.0, u, v
    for k in range(b):
        p_norm += img[y, x, k] * img[y, x, k]
    p_norm = sqrt(p_norm)
    if p_norm == 0.0 or c_norm == 0.0:
        return M_PI / 2
    for k in range(b):
        u = img[y, x, k] / p_norm
        v = c[k] / c_norm
        d2 += (u - v) * (u - v)
        s2 += (u + v) * (u + v)
    return 2.0 * atan2(sqrt(d2), sqrt(s2))


def window_scores(image, int radius):
    cdef const double[:, :, ::1] img = np.ascontiguousarray(image, dtype=np.float64)
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1], b = img.shape[2]
    cdef Py_ssize_t d = 2 * radius + 1
    cdef Py_ssize_t oh = h - d + 1, ow = w - d + 1
    if oh < 1 or ow < 1:
        raise ValueError("window larger than image")
    centroids = np.zeros((oh, ow, b), dtype=np.float64)
    scores = np.zeros((oh, ow), dtype=np.float64)
    cdef double[:, :, ::1] cv = centroids
    cdef double[:, ::1] sv = scores
    cdef Py_ssize_t y, x, dy, dx, k
    cdef double inv = 1.0 / (d * d), c_norm, acc
    with nogil:
        for y in range(oh):
            for x in range(ow):
                for dy in range(d):
                    for dx in range(d):
                        for k in range(b):
                            cv[y, x, k] += img[y + dy, x + dx, k]
                c_norm = 0.0
                for k in range(b):
                    cv[y, x, k] *= inv
                    c_norm += cv[y, x, k] * cv[y, x, k]
                c_norm = sqrt(c_norm)
                acc = 0.0
                for dy in range(d):
                    for dx in range(d):
                        acc += _angle(img, y + dy, x + dx, cv[y, x], c_norm)
                sv[y, x] = acc * inv
    return scores, centroids
