# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the filter inner loop.

Mirrors ``kalnat._kernels_py`` exactly; see that module for semantics.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


def scaled_gram(const double[:, ::1] H, const double[::1] d):
    cdef int m = <int>H.shape[0], n = <int>H.shape[1]
    cdef Py_ssize_t a, b, i
    cdef double one = 1.0, zero = 0.0
    cdef char trans_t = b'T', trans_n = b'N'
    out_arr = np.empty((m, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] HD = np.empty((m, n), dtype=np.float64)
    for a in range(m):
        for i in range(n):
            HD[a, i] = H[a, i] * d[i]
    if m == 0 or n == 0:
        out_arr.fill(0.0)
        return out_arr
    # row-major m x n is column-major n x m, so this is HD H^T
    dgemm(&trans_t, &trans_n, &m, &m, &n, &one, &HD[0, 0], &n,
          <double*>&H[0, 0], &n, &zero, &out[0, 0], &m)
    for a in range(m):
        for b in range(a):
            out[b, a] = out[a, b]
    return out_arr


def diag_downdate(const double[::1] d, const double[:, ::1] HS, const double[:, ::1] G, double scale, double floor):
    cdef Py_ssize_t m = HS.shape[0], n = HS.shape[1]
    cdef Py_ssize_t i, j
    cdef double v
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double[::1] acc_row = np.zeros(n, dtype=np.float64)
    for j in range(m):
        for i in range(n):
            acc_row[i] += G[j, i] * HS[j, i]
    for i in range(n):
        v = d[i] - scale * acc_row[i]
        out[i] = v if v > floor else floor
    return out_arr


def pair_jacobian(const double[:, ::1] Xi, const double[:, ::1] Xt,
                  const double[:, ::1] Wi, const double[:, ::1] Wt,
                  const double[:, ::1] Ai, const double[:, ::1] Bi,
                  const double[:, ::1] At, const double[:, ::1] Bt):
    cdef Py_ssize_t m = Xi.shape[0], d_in = Xi.shape[1]
    cdef Py_ssize_t r = Ai.shape[1], e = Bi.shape[1]
    cdef Py_ssize_t n_a = d_in * r, n_b = r * e
    cdef Py_ssize_t j, p, q, s, off
    cdef double ni2, nt2, dot, inv, yj, acc

    cdef double[:, ::1] Pi = np.empty((d_in, e), dtype=np.float64)
    cdef double[:, ::1] Pt = np.empty((d_in, e), dtype=np.float64)
    cdef double[:, ::1] Ei = np.empty((m, e), dtype=np.float64)
    cdef double[:, ::1] Et = np.empty((m, e), dtype=np.float64)
    cdef double[:, ::1] XAi = np.empty((m, r), dtype=np.float64)
    cdef double[:, ::1] XAt = np.empty((m, r), dtype=np.float64)
    cdef double acc2
    # projections W + A B
    for p in range(d_in):
        for s in range(e):
            acc = Wi[p, s]
            acc2 = Wt[p, s]
            for q in range(r):
                acc += Ai[p, q] * Bi[q, s]
                acc2 += At[p, q] * Bt[q, s]
            Pi[p, s] = acc
            Pt[p, s] = acc2
    # embeddings X P and the rank-space activations X A
    for j in range(m):
        for s in range(e):
            acc = 0.0
            acc2 = 0.0
            for p in range(d_in):
                acc += Xi[j, p] * Pi[p, s]
                acc2 += Xt[j, p] * Pt[p, s]
            Ei[j, s] = acc
            Et[j, s] = acc2
        for q in range(r):
            acc = 0.0
            acc2 = 0.0
            for p in range(d_in):
                acc += Xi[j, p] * Ai[p, q]
                acc2 += Xt[j, p] * At[p, q]
            XAi[j, q] = acc
            XAt[j, q] = acc2

    y_arr = np.empty(m, dtype=np.float64)
    ni_arr = np.empty(m, dtype=np.float64)
    nt_arr = np.empty(m, dtype=np.float64)
    J_arr = np.empty((m, 2 * (n_a + n_b)), dtype=np.float64)
    cdef double[::1] y = y_arr
    cdef double[::1] ni = ni_arr
    cdef double[::1] nt = nt_arr
    cdef double[:, ::1] J = J_arr
    cdef double[::1] gi = np.empty(e, dtype=np.float64)
    cdef double[::1] gt = np.empty(e, dtype=np.float64)
    cdef double[::1] gBi = np.empty(r, dtype=np.float64)
    cdef double[::1] gBt = np.empty(r, dtype=np.float64)

    for j in range(m):
        ni2 = 0.0
        nt2 = 0.0
        dot = 0.0
        for s in range(e):
            ni2 += Ei[j, s] * Ei[j, s]
            nt2 += Et[j, s] * Et[j, s]
            dot += Ei[j, s] * Et[j, s]
        ni[j] = sqrt(ni2)
        nt[j] = sqrt(nt2)
        inv = 1.0 / (ni[j] * nt[j])
        yj = dot * inv
        y[j] = yj
        for s in range(e):
            gi[s] = Et[j, s] * inv - (yj / ni2) * Ei[j, s]
            gt[s] = Ei[j, s] * inv - (yj / nt2) * Et[j, s]
        for q in range(r):
            acc = 0.0
            for s in range(e):
                acc += gi[s] * Bi[q, s]
            gBi[q] = acc
            acc = 0.0
            for s in range(e):
                acc += gt[s] * Bt[q, s]
            gBt[q] = acc
        # image tower: A then B
        for p in range(d_in):
            for q in range(r):
                J[j, p * r + q] = Xi[j, p] * gBi[q]
        off = n_a
        for q in range(r):
            for s in range(e):
                J[j, off + q * e + s] = XAi[j, q] * gi[s]
        # text tower
        off = n_a + n_b
        for p in range(d_in):
            for q in range(r):
                J[j, off + p * r + q] = Xt[j, p] * gBt[q]
        off = 2 * n_a + n_b
        for q in range(r):
            for s in range(e):
                J[j, off + q * e + s] = XAt[j, q] * gt[s]
    return y_arr, J_arr, ni_arr, nt_arr
