# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled fused row kernels. Mirrors ``_pykernels`` one-to-one."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, fabs, INFINITY, isfinite

cnp.import_array()

cdef double LOG_2PI = 1.8378770664093453
cdef double PROB_CLAMP = 1e-7


cdef inline double _softplus(double a) nogil:
    if a > 0:
        return a + log1p(exp(-a))
    return log1p(exp(a))


cdef inline double _sigmoid(double a) nogil:
    cdef double e
    if a >= 0:
        return 1.0 / (1.0 + exp(-a))
    e = exp(a)
    return e / (1.0 + e)


def softplus(a):
    cdef cnp.ndarray[double, ndim=2, mode="c"] src = np.ascontiguousarray(a, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] out = np.empty_like(src)
    cdef double[:, ::1] s = src
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(s.shape[0]):
            for j in range(s.shape[1]):
                o[i, j] = _softplus(s[i, j])
    return out


def sigmoid(a):
    cdef cnp.ndarray[double, ndim=2, mode="c"] src = np.ascontiguousarray(a, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] out = np.empty_like(src)
    cdef double[:, ::1] s = src
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(s.shape[0]):
            for j in range(s.shape[1]):
                o[i, j] = _sigmoid(s[i, j])
    return out


def gauss_rows_fwd(x, mu, sigma, w=None):
    cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] mv = np.ascontiguousarray(mu, dtype=np.float64)
    cdef double[:, ::1] sv = np.ascontiguousarray(sigma, dtype=np.float64)
    cdef double[:, ::1] wv
    cdef bint weighted = w is not None
    if weighted:
        wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], p = xv.shape[1], i, j
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] ov = out
    cdef double acc, z, t
    with nogil:
        for i in range(n):
            acc = 0.0
            for j in range(p):
                z = (xv[i, j] - mv[i, j]) / sv[i, j]
                t = -0.5 * LOG_2PI - log(sv[i, j]) - 0.5 * z * z
                if weighted:
                    t = t * wv[i, j]
                acc += t
            ov[i] = acc
    return out


def gauss_rows_bwd(x, mu, sigma, w, g):
    cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] mv = np.ascontiguousarray(mu, dtype=np.float64)
    cdef double[:, ::1] sv = np.ascontiguousarray(sigma, dtype=np.float64)
    cdef double[::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef double[:, ::1] wv
    cdef bint weighted = w is not None
    if weighted:
        wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], p = xv.shape[1], i, j
    dx = np.empty((n, p), dtype=np.float64)
    dmu = np.empty((n, p), dtype=np.float64)
    dsig = np.empty((n, p), dtype=np.float64)
    cdef double[:, ::1] dxv = dx
    cdef double[:, ::1] dmv = dmu
    cdef double[:, ::1] dsv = dsig
    cdef double z, gw, s
    with nogil:
        for i in range(n):
            for j in range(p):
                gw = gv[i]
                if weighted:
                    gw = gw * wv[i, j]
                if gw == 0.0:
                    dxv[i, j] = 0.0
                    dmv[i, j] = 0.0
                    dsv[i, j] = 0.0
                    continue
                s = sv[i, j]
                z = (xv[i, j] - mv[i, j]) / s
                dxv[i, j] = -gw * z / s
                dmv[i, j] = gw * z / s
                dsv[i, j] = gw * (z * z - 1.0) / s
    return dx, dmu, dsig


def bern_logits_rows_fwd(logits, r, w=None):
    cdef double[:, ::1] lv = np.ascontiguousarray(logits, dtype=np.float64)
    cdef double[:, ::1] rv = np.ascontiguousarray(r, dtype=np.float64)
    cdef double[:, ::1] wv
    cdef bint weighted = w is not None
    if weighted:
        wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t n = lv.shape[0], p = lv.shape[1], i, j
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] ov = out
    cdef double acc, pr, t
    with nogil:
        for i in range(n):
            acc = 0.0
            for j in range(p):
                pr = _sigmoid(lv[i, j])
                if pr < PROB_CLAMP:
                    pr = PROB_CLAMP
                elif pr > 1.0 - PROB_CLAMP:
                    pr = 1.0 - PROB_CLAMP
                if rv[i, j] == 1.0:
                    t = log(pr)
                elif rv[i, j] == 0.0:
                    t = log1p(-pr)
                else:
                    t = rv[i, j] * log(pr) + (1.0 - rv[i, j]) * log1p(-pr)
                if weighted:
                    t = t * wv[i, j]
                acc += t
            ov[i] = acc
    return out


def bern_logits_rows_bwd(logits, r, w, g):
    cdef double[:, ::1] lv = np.ascontiguousarray(logits, dtype=np.float64)
    cdef double[:, ::1] rv = np.ascontiguousarray(r, dtype=np.float64)
    cdef double[::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef double[:, ::1] wv
    cdef bint weighted = w is not None
    if weighted:
        wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t n = lv.shape[0], p = lv.shape[1], i, j
    d = np.empty((n, p), dtype=np.float64)
    cdef double[:, ::1] dv = d
    cdef double s, t
    with nogil:
        for i in range(n):
            for j in range(p):
                s = _sigmoid(lv[i, j])
                if s > PROB_CLAMP and s < 1.0 - PROB_CLAMP:
                    t = rv[i, j] - s
                else:
                    t = 0.0
                if weighted:
                    t = t * wv[i, j]
                dv[i, j] = t * gv[i]
    return d


def lse_rows_fwd(a):
    cdef double[:, ::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef Py_ssize_t n = av.shape[0], p = av.shape[1], i, j
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    cdef double m, acc
    with nogil:
        for i in range(n):
            m = -INFINITY
            for j in range(p):
                if av[i, j] > m or av[i, j] != av[i, j]:
                    m = av[i, j]
            if m == -INFINITY:
                ov[i] = -INFINITY
                continue
            if not isfinite(m):
                ov[i] = m
                continue
            acc = 0.0
            for j in range(p):
                acc += exp(av[i, j] - m)
            ov[i] = m + log(acc)
    return out


def lse_rows_bwd(a, out, g):
    cdef double[:, ::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[::1] outv = np.ascontiguousarray(out, dtype=np.float64)
    cdef double[::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef Py_ssize_t n = av.shape[0], p = av.shape[1], i, j
    d = np.empty((n, p), dtype=np.float64)
    cdef double[:, ::1] dv = d
    with nogil:
        for i in range(n):
            if isfinite(outv[i]):
                for j in range(p):
                    dv[i, j] = exp(av[i, j] - outv[i]) * gv[i]
            else:
                for j in range(p):
                    dv[i, j] = 0.0
    return d
