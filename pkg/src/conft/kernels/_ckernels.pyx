# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_reference.py`` (same contracts).

Matrix products stay in BLAS; the masked softmax pass that numpy spreads
over many temporaries is fused into one loop here.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()


def contrastive_terms(Z_in, anchors_in, positives_in, weights_in, double gamma, double scale):
    Z = np.ascontiguousarray(Z_in, dtype=np.float64)
    anchors_arr = np.ascontiguousarray(anchors_in, dtype=np.int64)
    Za = Z[anchors_arr]
    S_arr = Za @ Z.T
    cdef double[:, ::1] S = S_arr  # overwritten in place with the coefficient matrix
    cdef const cnp.int64_t[::1] positives = np.ascontiguousarray(positives_in, dtype=np.int64)
    cdef const double[:, ::1] W = np.ascontiguousarray(weights_in, dtype=np.float64)
    cdef Py_ssize_t A = S.shape[0], N = S.shape[1], a, j, p
    out_log = np.empty(A, dtype=np.float64)
    cdef double[::1] log_l = out_log
    cdef double inv_g = 1.0 / gamma, m, sp, denom, ep, c, v

    with nogil:
        for a in range(A):
            p = positives[a]
            sp = S[a, p] * inv_g
            m = sp
            for j in range(N):
                if W[a, j] > 0.0:
                    v = S[a, j] * inv_g
                    if v > m:
                        m = v
            ep = exp(sp - m)
            denom = ep
            for j in range(N):
                if W[a, j] > 0.0:
                    v = W[a, j] * exp(S[a, j] * inv_g - m)
                    S[a, j] = v
                    denom += v
                else:
                    S[a, j] = 0.0
            log_l[a] = sp - m - log(denom)
            c = scale * inv_g / denom
            for j in range(N):
                S[a, j] *= c
            S[a, p] += (ep / denom - 1.0) * scale * inv_g
    grad_arr = S_arr.T @ Za
    SZ_arr = S_arr @ Z
    cdef double[:, ::1] grad = grad_arr
    cdef const double[:, ::1] SZ = SZ_arr
    cdef const cnp.int64_t[::1] anchors = anchors_arr
    cdef Py_ssize_t k, r = SZ.shape[1], i
    with nogil:
        for a in range(A):
            i = anchors[a]
            for k in range(r):
                grad[i, k] += SZ[a, k]
    return out_log, grad_arr


def cluster_sums(Z_in, labels_in):
    Z = np.ascontiguousarray(Z_in, dtype=np.float64)
    G_arr = Z @ Z.T
    cdef const double[:, ::1] G = G_arr
    cdef const cnp.int64_t[::1] labels = np.ascontiguousarray(labels_in, dtype=np.int64)
    cdef Py_ssize_t n = G.shape[0], i, j
    cdef double within = 0.0, cross = 0.0
    with nogil:
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                if labels[i] == labels[j]:
                    within += 1.0 - G[i, j]
                else:
                    cross += 1.0 - G[i, j]
    return within, cross
