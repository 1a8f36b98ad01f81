# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for subword merging and embedding pooling.

Every function here has a drop-in equivalent in ``_kernels_py``; the two are
checked against each other in the test suite.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def merge_pair(const cnp.int32_t[::1] symbols, int a, int b, int new):
    """Replace every left-to-right non-overlapping occurrence of (a, b) by new."""
    cdef Py_ssize_t n = symbols.shape[0]
    out = np.empty(n, dtype=np.int32)
    cdef cnp.int32_t[::1] o = out
    cdef Py_ssize_t i = 0, j = 0
    while i < n:
        if i + 1 < n and symbols[i] == a and symbols[i + 1] == b:
            o[j] = new
            i += 2
        else:
            o[j] = symbols[i]
            i += 1
        j += 1
    return out[:j]


def pool_mean(const cnp.int64_t[:, ::1] ids, const cnp.int64_t[::1] lengths,
              const double[:, ::1] table):
    cdef Py_ssize_t B = ids.shape[0], d = table.shape[1]
    out = np.zeros((B, d), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t r, j, k, n
    cdef cnp.int64_t t
    cdef double inv
    for r in range(B):
        n = lengths[r]
        for j in range(n):
            t = ids[r, j]
            for k in range(d):
                o[r, k] += table[t, k]
        if n > 0:
            inv = 1.0 / n
            for k in range(d):
                o[r, k] *= inv
    return out


def pool_scatter(const cnp.int64_t[:, ::1] ids, const cnp.int64_t[::1] lengths,
                 const double[:, ::1] grad_pooled, double[:, ::1] grad_table):
    """Accumulate the gradient of pool_mean into grad_table in place."""
    cdef Py_ssize_t B = ids.shape[0], d = grad_table.shape[1]
    cdef Py_ssize_t r, j, k, n
    cdef cnp.int64_t t
    cdef double inv
    for r in range(B):
        n = lengths[r]
        if n == 0:
            continue
        inv = 1.0 / n
        for j in range(n):
            t = ids[r, j]
            for k in range(d):
                grad_table[t, k] += grad_pooled[r, k] * inv
