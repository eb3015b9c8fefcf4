# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the hot kernels.

Semantics must match ``_kernels_py.py``: integer outputs bit-exact, float
outputs equal up to accumulation order.
"""

import numpy as np

cimport numpy as cnp
from libc.stdint cimport int64_t, uint64_t

cnp.import_array()

cdef uint64_t FNV_BASIS = 0xCBF29CE484222325ULL
cdef uint64_t FNV_PRIME = 0x100000001B3ULL


def dot_scores(double[:, ::1] matrix, double[::1] query):
    """Dot product of each row of ``matrix`` against ``query``."""
    cdef Py_ssize_t n = matrix.shape[0]
    cdef Py_ssize_t d = matrix.shape[1]
    if query.shape[0] != d:
        raise ValueError("query dimension does not match matrix columns")
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] out_view = out
    cdef Py_ssize_t i, j
    cdef double acc
    for i in range(n):
        acc = 0.0
        for j in range(d):
            acc += matrix[i, j] * query[j]
        out_view[i] = acc
    return out


def trigram_bucket_counts(cnp.uint64_t[::1] padded_ids, int n_buckets, uint64_t seed):
    """Histogram of hashed token-id trigrams over ``n_buckets`` buckets.

    FNV-1a over the 24 little-endian bytes of each id window, starting from
    the FNV basis XOR ``seed``. ``padded_ids`` includes the two leading
    sentinel ids.
    """
    cdef Py_ssize_t n = padded_ids.shape[0] - 2
    counts = np.zeros(n_buckets, dtype=np.int64)
    if n <= 0:
        return counts
    cdef int64_t[::1] counts_view = counts
    cdef uint64_t init = FNV_BASIS ^ seed
    cdef uint64_t h, word
    cdef Py_ssize_t i
    cdef int window, shift
    for i in range(n):
        h = init
        for window in range(3):
            word = padded_ids[i + window]
            for shift in range(0, 64, 8):
                h = (h ^ ((word >> shift) & 0xFFULL)) * FNV_PRIME
        counts_view[<Py_ssize_t>(h % <uint64_t>n_buckets)] += 1
    return counts
