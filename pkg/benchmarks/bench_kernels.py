"""Compare the compiled kernels against the NumPy fallback.

Runs both implementations on identical inputs, checks they agree, and
prints per-call timings. The compiled extension is optional; without it
this still times the fallback so regressions stay visible.

    python3 benchmarks/bench_kernels.py --rows 5000 --queries 200
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from rulegenie import _kernels_py
from rulegenie.embedding import EMBED_HASH_SEED

try:
    from rulegenie import _kernels
except ImportError:
    _kernels = None


def _time(fn, repeats: int) -> float:
    """Best-of-three mean seconds per call."""
    best = float("inf")
    for _ in range(3):
        start = time.perf_counter()
        for _ in range(repeats):
            fn()
        best = min(best, (time.perf_counter() - start) / repeats)
    return best


def bench_dot_scores(rows: int, dim: int, queries: int) -> list[tuple[str, float]]:
    rng = np.random.default_rng(0)
    matrix = rng.normal(size=(rows, dim))
    matrix /= np.linalg.norm(matrix, axis=1, keepdims=True)
    qs = rng.normal(size=(queries, dim))

    def run(impl):
        def call():
            for q in qs:
                impl.dot_scores(matrix, np.ascontiguousarray(q))
        return call

    results = [("python", _time(run(_kernels_py), repeats=3))]
    if _kernels is not None:
        results.append(("cython", _time(run(_kernels), repeats=3)))
        got = _kernels.dot_scores(matrix, np.ascontiguousarray(qs[0]))
        want = _kernels_py.dot_scores(matrix, np.ascontiguousarray(qs[0]))
        assert np.allclose(got, want, atol=1e-12), "kernel outputs diverge"
    return results


def bench_trigrams(tokens: int, reps: int) -> list[tuple[str, float]]:
    rng = np.random.default_rng(1)
    padded = rng.integers(0, 2**63, size=tokens + 2, dtype=np.uint64)

    def run(impl):
        def call():
            for _ in range(reps):
                impl.trigram_bucket_counts(padded, 256, EMBED_HASH_SEED)
        return call

    results = [("python", _time(run(_kernels_py), reps) / reps)]
    if _kernels is not None:
        results.append(("cython", _time(run(_kernels), reps) / reps))
        got = _kernels.trigram_bucket_counts(padded, 256, EMBED_HASH_SEED)
        want = _kernels_py.trigram_bucket_counts(padded, 256, EMBED_HASH_SEED)
        assert np.array_equal(np.asarray(got), np.asarray(want)), "kernel outputs diverge"
    return results


def _report(title: str, unit_calls: int, results: list[tuple[str, float]]) -> None:
    print(f"\n{title}")
    baseline = results[0][1]
    for name, seconds in results:
        per_call = seconds / unit_calls
        speedup = f"{baseline / seconds:5.1f}x" if seconds else "  n/a"
        print(f"  {name:<8} {per_call * 1e6:10.1f} us/call  {speedup}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--rows", type=int, default=5000, help="index rows")
    parser.add_argument("--dim", type=int, default=256, help="vector dimension")
    parser.add_argument("--queries", type=int, default=200, help="queries per run")
    parser.add_argument("--tokens", type=int, default=4096, help="token ids per trigram call")
    parser.add_argument("--reps", type=int, default=200, help="trigram calls per run")
    args = parser.parse_args()

    if _kernels is None:
        print("compiled extension not built; timing the NumPy fallback only")

    _report(
        f"dot_scores: ({args.rows}, {args.dim}) matrix x {args.queries} queries",
        args.queries,
        bench_dot_scores(args.rows, args.dim, args.queries),
    )
    _report(
        f"trigram_bucket_counts: {args.tokens} ids -> 256 buckets, {args.reps} calls",
        1,
        bench_trigrams(args.tokens, args.reps),
    )


if __name__ == "__main__":
    main()
