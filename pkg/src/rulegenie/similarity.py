"""Exact top-k cosine retrieval over the active rule embeddings.

A linear scan is exact and cheap at the target scale (a few thousand
rules); ties are broken by ascending rule id so rankings are reproducible.
The index is immutable once built: refresh returns a new snapshot.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from rulegenie import kernels
from rulegenie.embedding import RuleEmbedding
from rulegenie.model import RuleGenieError, RuleId, RuleSet

_NORM_TOLERANCE = 1e-6


class BackendMismatch(RuleGenieError):
    pass


class DimensionMismatch(RuleGenieError):
    pass


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity with the zero-vector convention.

    Returns dot(a, b) / (|a| |b|), clamped to [-1, 1]; either norm being
    zero yields 0.0, which is how overflow (zero-vector) embeddings compare.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shape mismatch: {a.shape} vs {b.shape}")
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    value = float(np.dot(a, b)) / (norm_a * norm_b)
    return max(-1.0, min(1.0, value))


@dataclass(frozen=True)
class Neighbor:
    rule_id: RuleId
    score: float


class SimilarityIndex:
    """Immutable snapshot of unit vectors for the Active, non-overflow rules."""

    def __init__(self, backend_id: str, dimension: int, entries: Mapping[RuleId, np.ndarray]):
        self.backend_id = backend_id
        self.dimension = dimension
        self._ids: list[RuleId] = sorted(entries)
        if self._ids:
            matrix = np.stack([np.asarray(entries[i], dtype=np.float64) for i in self._ids])
            if matrix.shape[1] != dimension:
                raise DimensionMismatch(
                    f"entry dimension {matrix.shape[1]} != index dimension {dimension}"
                )
            norms = np.linalg.norm(matrix, axis=1)
            if not np.all(np.abs(norms - 1.0) <= _NORM_TOLERANCE):
                worst = self._ids[int(np.argmax(np.abs(norms - 1.0)))]
                raise ValueError(f"entry {worst!r} is not unit-norm")
            self._matrix = np.ascontiguousarray(matrix)
        else:
            self._matrix = np.empty((0, dimension), dtype=np.float64)

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, rule_id: RuleId) -> bool:
        return rule_id in set(self._ids)

    def ids(self) -> list[RuleId]:
        return list(self._ids)

    @classmethod
    def refresh(
        cls,
        embeddings: Mapping[RuleId, RuleEmbedding],
        rule_set: RuleSet,
    ) -> "SimilarityIndex":
        """Build a fresh index over exactly the Active non-overflow embeddings."""
        active = rule_set.active_ids()
        kept = {
            rid: emb.vector
            for rid, emb in embeddings.items()
            if rid in active and not emb.overflow
        }
        backend_ids = {embeddings[rid].backend_id for rid in kept}
        if len(backend_ids) > 1:
            raise BackendMismatch(f"mixed backends in one index: {sorted(backend_ids)}")
        if kept:
            backend_id = next(iter(backend_ids))
            dimension = next(iter(kept.values())).shape[0]
        else:
            any_emb = next(iter(embeddings.values()), None)
            backend_id = any_emb.backend_id if any_emb else ""
            dimension = any_emb.vector.shape[0] if any_emb else 0
        return cls(backend_id=backend_id, dimension=int(dimension), entries=kept)

    def top_k(
        self,
        query: RuleEmbedding,
        k: int,
        exclude: Iterable[RuleId] = (),
    ) -> list[Neighbor]:
        """The k highest-cosine neighbors, score descending, id ascending on ties.

        The query's own id and ``exclude`` are removed from the candidate
        pool; an overflow query matches nothing.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        if query.backend_id != self.backend_id and len(self._ids) > 0:
            raise BackendMismatch(
                f"query backend {query.backend_id!r} != index backend {self.backend_id!r}"
            )
        if query.overflow or not self._ids:
            return []
        scores = kernels.dot_scores(self._matrix, query.vector)
        np.clip(scores, -1.0, 1.0, out=scores)
        excluded = set(exclude)
        excluded.add(query.rule_id)
        eligible = np.array([rid not in excluded for rid in self._ids], dtype=bool)
        if not eligible.any():
            return []
        positions = np.nonzero(eligible)[0]
        # Stable lexicographic order: score descending, then id ascending
        # (ids are stored sorted, so position order is id order).
        order = np.lexsort((positions, -scores[positions]))
        top = positions[order[:k]]
        return [Neighbor(rule_id=self._ids[i], score=float(scores[i])) for i in top]
