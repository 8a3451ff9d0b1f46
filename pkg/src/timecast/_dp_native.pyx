# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel for the monotone stage-assignment lattice.

Same contract as timecast._dp_numpy: transitions from any stage k' <= k,
ties broken toward the lower stage index.
"""
import numpy as np

cimport numpy as cnp

cnp.import_array()


def dp_forward(double[:, ::1] costs):
    cdef Py_ssize_t K = costs.shape[0]
    cdef Py_ssize_t T = costs.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] gamma_arr = np.empty((K, T), dtype=np.float64)
    cdef cnp.ndarray[cnp.int32_t, ndim=2] back_arr = np.full((K, T), -1, dtype=np.int32)
    cdef double[:, ::1] gamma = gamma_arr
    cdef int[:, ::1] backptr = back_arr
    cdef Py_ssize_t k, t
    cdef double best
    cdef int best_k

    for k in range(K):
        gamma[k, 0] = costs[k, 0]
    for t in range(1, T):
        best = gamma[0, t - 1]
        best_k = 0
        for k in range(K):
            # strict comparison keeps the lowest index on ties
            if gamma[k, t - 1] > best:
                best = gamma[k, t - 1]
                best_k = k
            gamma[k, t] = best + costs[k, t]
            backptr[k, t] = best_k
    return gamma_arr, back_arr


def dp_backtrace(double[:, :] gamma, int[:, :] backptr):
    cdef Py_ssize_t K = gamma.shape[0]
    cdef Py_ssize_t T = gamma.shape[1]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] path_arr = np.empty(T, dtype=np.int64)
    cdef long long[::1] path = path_arr
    cdef Py_ssize_t k, t
    cdef double best = gamma[0, T - 1]
    cdef long long best_k = 0

    for k in range(1, K):
        if gamma[k, T - 1] > best:
            best = gamma[k, T - 1]
            best_k = k
    path[T - 1] = best_k
    for t in range(T - 1, 0, -1):
        path[t - 1] = backptr[path[t], t]
    return path_arr
