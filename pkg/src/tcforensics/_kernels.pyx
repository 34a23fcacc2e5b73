# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-series kernels. See ``_fallback`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, NAN

cnp.import_array()

ctypedef cnp.int64_t i64


def interarrival(timestamps):
    cdef const i64[::1] ts = np.ascontiguousarray(timestamps, dtype=np.int64)
    cdef Py_ssize_t n = ts.shape[0]
    cdef Py_ssize_t i, k = 0
    cdef i64 d
    cdef Py_ssize_t dropped = 0
    out_arr = np.empty(max(n - 1, 0), dtype=np.int64)
    cdef i64[::1] out = out_arr
    for i in range(1, n):
        d = ts[i] - ts[i - 1]
        if d > 0:
            out[k] = d
            k += 1
        else:
            dropped += 1
    return out_arr[:k].copy(), dropped


def group_starts(sorted_values, double k1):
    cdef const i64[::1] v = np.ascontiguousarray(sorted_values, dtype=np.int64)
    cdef Py_ssize_t n = v.shape[0]
    cdef Py_ssize_t i, k = 0
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    out_arr = np.empty(n, dtype=np.int64)
    cdef i64[::1] out = out_arr
    out[0] = 0
    k = 1
    for i in range(1, n):
        if fabs(<double>(v[i] - v[i - 1])) / (<double>v[i - 1]) > k1:
            out[k] = i
            k += 1
    return out_arr[:k].copy()


def ols_slope(values):
    cdef const i64[::1] v = np.ascontiguousarray(values, dtype=np.int64)
    cdef Py_ssize_t n = v.shape[0]
    cdef Py_ssize_t i
    cdef double c, s = 0.0, w = 0.0, x
    if n < 2:
        return 0.0
    c = (n - 1) / 2.0
    for i in range(n):
        x = <double>v[i]
        s += x
        w += (i - c) * x
    return fabs(12.0 * w / (s * (n + 1)))


def epsilon_fraction(sorted_values, double eps):
    cdef const i64[::1] v = np.ascontiguousarray(sorted_values, dtype=np.int64)
    cdef Py_ssize_t n = v.shape[0]
    cdef Py_ssize_t i, hits = 0
    if n < 2:
        return NAN
    for i in range(n - 1):
        if fabs(<double>(v[i + 1] - v[i])) / (<double>v[i]) < eps:
            hits += 1
    return hits / <double>(n - 1)


cdef cnp.ndarray _window_sigmas(const i64[::1] v, Py_ssize_t window):
    cdef Py_ssize_t n_win = v.shape[0] // window
    cdef Py_ssize_t w, i
    cdef double m, acc, x
    out_arr = np.empty(n_win, dtype=np.float64)
    cdef double[::1] out = out_arr
    for w in range(n_win):
        m = 0.0
        for i in range(w * window, (w + 1) * window):
            m += <double>v[i]
        m /= window
        acc = 0.0
        for i in range(w * window, (w + 1) * window):
            x = <double>v[i]
            acc += (x - m) * (x - m)
        out[w] = sqrt(acc / window)
    return out_arr


def window_sigmas(values, Py_ssize_t window):
    return _window_sigmas(np.ascontiguousarray(values, dtype=np.int64), window)


def regularity(values, Py_ssize_t window, double cap):
    cdef double[::1] sig = _window_sigmas(
        np.ascontiguousarray(values, dtype=np.int64), window)
    cdef Py_ssize_t m = sig.shape[0]
    cdef Py_ssize_t i, j, k = 0, npairs = m * (m - 1) // 2
    cdef double a, b, mean = 0.0, acc = 0.0
    if npairs == 0:
        return NAN
    d_arr = np.empty(npairs, dtype=np.float64)
    cdef double[::1] d = d_arr
    for i in range(m):
        for j in range(i + 1, m):
            a = sig[i]
            b = sig[j]
            if a == 0.0 and b == 0.0:
                d[k] = 0.0
            elif a == 0.0 or b == 0.0:
                d[k] = cap
            else:
                d[k] = fabs(a - b) / a
            k += 1
    for k in range(npairs):
        mean += d[k]
    mean /= npairs
    for k in range(npairs):
        acc += (d[k] - mean) * (d[k] - mean)
    return sqrt(acc / npairs)
