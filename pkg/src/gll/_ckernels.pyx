# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: pairwise squared distances, k-NN selection and Jacobi-PCG.

Signatures mirror gll._pykernels; gll._backend picks one set at import time.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, sqrt

cnp.import_array()


def sqdist(double[:, ::1] X):
    """Full matrix of pairwise squared Euclidean distances (direct differences)."""
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    out_arr = np.empty((n, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, t
    cdef double acc, diff
    for i in range(n):
        out[i, i] = 0.0
        for j in range(i + 1, n):
            acc = 0.0
            for t in range(d):
                diff = X[i, t] - X[j, t]
                acc += diff * diff
            out[i, j] = acc
            out[j, i] = acc
    return out_arr


def knn_select(double[:, ::1] D, Py_ssize_t k):
    """Per-row k smallest off-diagonal entries of a squared-distance matrix.

    Rows are ordered by (distance, index), so exact ties resolve to the
    lower node index. Returns (indices, squared distances), each (n, k).
    """
    cdef Py_ssize_t n = D.shape[0]
    idx_arr = np.empty((n, k), dtype=np.int64)
    dist_arr = np.empty((n, k), dtype=np.float64)
    cdef long long[:, ::1] idx = idx_arr
    cdef double[:, ::1] dist = dist_arr
    cdef Py_ssize_t i, j, m, pos
    cdef double dj
    for i in range(n):
        for m in range(k):
            dist[i, m] = INFINITY
            idx[i, m] = -1
        for j in range(n):
            if j == i:
                continue
            dj = D[i, j]
            if dj > dist[i, k - 1]:
                continue
            if dj == dist[i, k - 1] and j > idx[i, k - 1] and idx[i, k - 1] >= 0:
                continue
            pos = k - 1
            while pos > 0 and (dj < dist[i, pos - 1] or
                               (dj == dist[i, pos - 1] and j < idx[i, pos - 1])):
                dist[i, pos] = dist[i, pos - 1]
                idx[i, pos] = idx[i, pos - 1]
                pos -= 1
            dist[i, pos] = dj
            idx[i, pos] = j
    return idx_arr, dist_arr


def pcg(long long[::1] indptr, long long[::1] indices, double[::1] data,
        double[::1] inv_diag, double[::1] b, double[::1] x,
        double rtol, double atol, Py_ssize_t maxiter):
    """Jacobi-preconditioned conjugate gradient on a CSR matrix, in place on x.

    Stops when ||r||_2 <= max(rtol*||b||_2, atol). Returns
    (iterations, final residual norm, ||b||_2).
    """
    cdef Py_ssize_t n = b.shape[0]
    cdef Py_ssize_t i, it, p0, p1, ptr
    cdef double bnorm2 = 0.0, rnorm2 = 0.0, thresh, acc
    cdef double alpha, beta, rz, rz_new, pap

    r_arr = np.empty(n, dtype=np.float64)
    z_arr = np.empty(n, dtype=np.float64)
    p_arr = np.empty(n, dtype=np.float64)
    ap_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] r = r_arr
    cdef double[::1] z = z_arr
    cdef double[::1] p = p_arr
    cdef double[::1] ap = ap_arr

    for i in range(n):
        bnorm2 += b[i] * b[i]
    if bnorm2 == 0.0:
        for i in range(n):
            x[i] = 0.0
        return 0, 0.0, 0.0
    thresh = max(rtol * sqrt(bnorm2), atol)

    # r = b - A x
    for i in range(n):
        acc = 0.0
        p0 = indptr[i]
        p1 = indptr[i + 1]
        for ptr in range(p0, p1):
            acc += data[ptr] * x[indices[ptr]]
        r[i] = b[i] - acc
        rnorm2 += r[i] * r[i]
    if sqrt(rnorm2) <= thresh:
        return 0, sqrt(rnorm2), sqrt(bnorm2)

    rz = 0.0
    for i in range(n):
        z[i] = inv_diag[i] * r[i]
        p[i] = z[i]
        rz += r[i] * z[i]

    for it in range(1, maxiter + 1):
        pap = 0.0
        for i in range(n):
            acc = 0.0
            p0 = indptr[i]
            p1 = indptr[i + 1]
            for ptr in range(p0, p1):
                acc += data[ptr] * p[indices[ptr]]
            ap[i] = acc
            pap += p[i] * acc
        if pap == 0.0:
            break
        alpha = rz / pap
        rnorm2 = 0.0
        for i in range(n):
            x[i] += alpha * p[i]
            r[i] -= alpha * ap[i]
            rnorm2 += r[i] * r[i]
        if sqrt(rnorm2) <= thresh:
            return it, sqrt(rnorm2), sqrt(bnorm2)
        rz_new = 0.0
        for i in range(n):
            z[i] = inv_diag[i] * r[i]
            rz_new += r[i] * z[i]
        beta = rz_new / rz
        rz = rz_new
        for i in range(n):
            p[i] = z[i] + beta * p[i]
    return maxiter, sqrt(rnorm2), sqrt(bnorm2)
