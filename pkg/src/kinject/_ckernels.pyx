# cython: language_level=3
"""Compiled row kernels. Each function mirrors one in ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()


def softmax_rows(const double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], i, j
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] y = out
    cdef double mx, total
    for i in range(n):
        mx = x[i, 0]
        for j in range(1, m):
            if x[i, j] > mx:
                mx = x[i, j]
        total = 0.0
        for j in range(m):
            y[i, j] = exp(x[i, j] - mx)
            total += y[i, j]
        for j in range(m):
            y[i, j] = y[i, j] / total
    return out


def softmax_rows_backward(const double[:, ::1] y, const double[:, ::1] g):
    cdef Py_ssize_t n = y.shape[0], m = y.shape[1], i, j
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] dx = out
    cdef double dot
    for i in range(n):
        dot = 0.0
        for j in range(m):
            dot += g[i, j] * y[i, j]
        for j in range(m):
            dx[i, j] = y[i, j] * (g[i, j] - dot)
    return out


def layer_norm_rows(const double[:, ::1] x, double eps):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], i, j
    xhat_arr = np.empty((n, m), dtype=np.float64)
    inv_arr = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] xhat = xhat_arr
    cdef double[::1] inv = inv_arr
    cdef double mean, var, d
    for i in range(n):
        mean = 0.0
        for j in range(m):
            mean += x[i, j]
        mean /= m
        var = 0.0
        for j in range(m):
            d = x[i, j] - mean
            var += d * d
        var /= m
        inv[i] = 1.0 / sqrt(var + eps)
        for j in range(m):
            xhat[i, j] = (x[i, j] - mean) * inv[i]
    return xhat_arr, inv_arr


def layer_norm_rows_backward(const double[:, ::1] xhat, const double[::1] inv,
                             const double[:, ::1] g):
    cdef Py_ssize_t n = xhat.shape[0], m = xhat.shape[1], i, j
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] dx = out
    cdef double sg, sgx
    for i in range(n):
        sg = 0.0
        sgx = 0.0
        for j in range(m):
            sg += g[i, j]
            sgx += g[i, j] * xhat[i, j]
        sg /= m
        sgx /= m
        for j in range(m):
            dx[i, j] = inv[i] * (g[i, j] - sg - xhat[i, j] * sgx)
    return out


def row_dots(const double[:, ::1] mat, const double[::1] q):
    cdef Py_ssize_t n = mat.shape[0], m = mat.shape[1], i, j
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] s = out
    cdef double acc
    for i in range(n):
        acc = 0.0
        for j in range(m):
            acc += mat[i, j] * q[j]
        s[i] = acc
    return out


def lcs_length(const long long[::1] a, const long long[::1] b):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], i, j
    if n == 0 or m == 0:
        return 0
    prev_arr = np.zeros(m + 1, dtype=np.int64)
    cur_arr = np.zeros(m + 1, dtype=np.int64)
    cdef long long[::1] prev = prev_arr
    cdef long long[::1] cur = cur_arr
    cdef long long[::1] tmp
    for i in range(1, n + 1):
        cur[0] = 0
        for j in range(1, m + 1):
            if a[i - 1] == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            elif prev[j] >= cur[j - 1]:
                cur[j] = prev[j]
            else:
                cur[j] = cur[j - 1]
        tmp = prev
        prev = cur
        cur = tmp
    return int(prev[m])
