"""Kernel selection: compiled extension if built, NumPy fallback otherwise.

``KERNEL_BACKEND`` names the active implementation ("cython" or "python");
``benchmarks/bench_kernels.py`` compares the two directly.
"""

from __future__ import annotations

import numpy as np

try:
    from rulegenie import _kernels as _impl

    KERNEL_BACKEND = "cython"
except ImportError:  # extension not built on this install
    from rulegenie import _kernels_py as _impl

    KERNEL_BACKEND = "python"

FNV_BASIS = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes, seed: int = 0) -> int:
    """FNV-1a 64-bit hash, optionally seeded by XOR into the basis."""
    h = FNV_BASIS ^ seed
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & _MASK64
    return h


def dot_scores(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Per-row dot products of ``matrix`` (n, d) against ``query`` (d,)."""
    matrix = np.ascontiguousarray(matrix, dtype=np.float64)
    query = np.ascontiguousarray(query, dtype=np.float64)
    if matrix.shape[0] == 0:
        return np.empty(0, dtype=np.float64)
    return np.asarray(_impl.dot_scores(matrix, query))


def trigram_bucket_counts(padded_ids: np.ndarray, n_buckets: int, seed: int) -> np.ndarray:
    """Integer histogram of hashed id-trigrams; see the kernel docstrings."""
    padded_ids = np.ascontiguousarray(padded_ids, dtype=np.uint64)
    return np.asarray(_impl.trigram_bucket_counts(padded_ids, n_buckets, seed))
