"""NumPy implementations of the hot kernels.

Selected at import time by :mod:`rulegenie.kernels` when the compiled
extension is unavailable. Must stay semantically identical to
``_kernels.pyx``: integer outputs are bit-exact across the two, float
outputs may differ only in accumulation order.
"""

from __future__ import annotations

import numpy as np

FNV_BASIS = np.uint64(0xCBF29CE484222325)
FNV_PRIME = np.uint64(0x100000001B3)
_BYTE = np.uint64(0xFF)


def dot_scores(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Dot product of each row of ``matrix`` against ``query``."""
    return matrix @ query


def trigram_bucket_counts(padded_ids: np.ndarray, n_buckets: int, seed: int) -> np.ndarray:
    """Histogram of hashed token-id trigrams over ``n_buckets`` buckets.

    Each window of three consecutive ids is hashed with FNV-1a over the 24
    little-endian bytes of the ids, starting from the FNV basis XOR ``seed``.
    ``padded_ids`` must already include the two leading sentinel ids, so a
    sequence of n real tokens yields n trigrams.
    """
    n = padded_ids.size - 2
    if n <= 0:
        return np.zeros(n_buckets, dtype=np.int64)
    h = np.full(n, FNV_BASIS ^ np.uint64(seed), dtype=np.uint64)
    for window in range(3):
        word = padded_ids[window : window + n]
        for shift in range(0, 64, 8):
            h = (h ^ ((word >> np.uint64(shift)) & _BYTE)) * FNV_PRIME
    buckets = (h % np.uint64(n_buckets)).astype(np.int64)
    return np.bincount(buckets, minlength=n_buckets).astype(np.int64)
