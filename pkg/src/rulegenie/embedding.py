"""Rule embedding: tokenization, boundary-aware segmentation, pooling.

Rules are tokenized into id sequences, cut into segments that respect
logical boundaries, encoded per segment by a pluggable backend, then mean
pooled and L2-normalized into one fixed-dimension vector. Rules whose token
count exceeds the overflow limit take the fallback path: an exact zero
vector plus an overflow flag, and the rule is marked for manual review.
"""

from __future__ import annotations

import bisect
import hashlib
import json
import math
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from rulegenie import kernels
from rulegenie.model import DetectionRule, RuleGenieError, RuleId, RuleSet

# Fixed hash seed for the built-in embedder (documented: golden-ratio gamma).
EMBED_HASH_SEED = 0x9E3779B97F4A7C15
# Boundary sentinel prepended twice before trigram hashing.
PAD_TOKEN_ID = kernels.fnv1a64(b"^")

# Characters in an inter-token gap that mark a logical boundary: line ends,
# closing brackets, and clause separators as seen in SPL/AQL/YAML logic.
_BOUNDARY_CHARS = frozenset("\n)]}|;")
_TOKEN_RE = re.compile(r"\w+")


class EmptySequence(RuleGenieError):
    pass


class BackendFailure(RuleGenieError):
    """Transport or model error from an embedding backend; retriable."""


class DimensionMismatch(RuleGenieError):
    pass


@dataclass
class TokenSequence:
    """Token ids plus the indices after which a logical boundary occurs.

    ``boundary_marks[i] == j`` means a segment may end after token ``j``.
    ``text`` and per-token ``spans`` are kept so segments can be mapped back
    to source text for remote encoders.
    """

    tokens: list[int]
    boundary_marks: list[int]
    text: str = ""
    spans: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        for prev, cur in zip(self.boundary_marks, self.boundary_marks[1:]):
            if cur <= prev:
                raise ValueError("boundary_marks must be strictly increasing")
        if self.boundary_marks and self.boundary_marks[-1] >= len(self.tokens):
            raise ValueError("boundary_marks must index into tokens")


@dataclass
class Segment:
    """A contiguous token slice [start, end) of a TokenSequence."""

    sequence: TokenSequence
    start: int
    end: int

    def __post_init__(self) -> None:
        if not 0 <= self.start < self.end <= len(self.sequence.tokens):
            raise ValueError(f"bad segment bounds [{self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start

    @property
    def tokens(self) -> list[int]:
        return self.sequence.tokens[self.start : self.end]

    def text(self) -> str:
        """Source text covered by this segment (empty when spans are absent)."""
        if not self.sequence.spans:
            return ""
        lo = self.sequence.spans[self.start][0]
        hi = self.sequence.spans[self.end - 1][1]
        return self.sequence.text[lo:hi]


@dataclass
class RuleEmbedding:
    """Fixed-dimension vector for one rule, with overflow provenance."""

    rule_id: RuleId
    vector: np.ndarray
    segment_count: int
    overflow: bool
    backend_id: str


@dataclass
class EmbedConfig:
    max_segment_tokens: int = 512
    overflow_limit: int = 4096
    retry_attempts: int = 3
    retry_backoff_s: float = 0.5
    parallelism: int = 4

    def __post_init__(self) -> None:
        if self.max_segment_tokens < 1:
            raise ValueError("max_segment_tokens must be >= 1")
        if self.max_segment_tokens > self.overflow_limit:
            raise ValueError("max_segment_tokens must not exceed overflow_limit")


def tokenize_text(text: str) -> TokenSequence:
    """Split on whitespace and punctuation; hash tokens to 64-bit ids.

    A boundary mark is recorded after token i when the gap before the next
    token contains a line end, a closing bracket, or a clause separator.
    """
    tokens: list[int] = []
    spans: list[tuple[int, int]] = []
    marks: list[int] = []
    cache: dict[str, int] = {}
    matches = list(_TOKEN_RE.finditer(text))
    for i, m in enumerate(matches):
        word = m.group()
        token_id = cache.get(word)
        if token_id is None:
            token_id = cache[word] = kernels.fnv1a64(word.encode("utf-8"))
        tokens.append(token_id)
        spans.append(m.span())
        if i + 1 < len(matches):
            gap = text[m.end() : matches[i + 1].start()]
            if any(c in _BOUNDARY_CHARS for c in gap):
                marks.append(i)
    return TokenSequence(tokens=tokens, boundary_marks=marks, text=text, spans=spans)


def segment(seq: TokenSequence, max_segment_tokens: int) -> list[Segment]:
    """Greedy boundary-respecting partition of ``seq``.

    Each cut lands on the latest boundary mark that keeps the segment within
    the limit; a hard cut at the limit is the fallback when no boundary is
    in range. Concatenating the segments reproduces the sequence exactly.
    """
    n = len(seq.tokens)
    if n == 0:
        raise EmptySequence("cannot segment an empty token sequence")
    if max_segment_tokens < 1:
        raise ValueError("max_segment_tokens must be >= 1")
    marks = seq.boundary_marks
    segments: list[Segment] = []
    start = 0
    while start < n:
        if n - start <= max_segment_tokens:
            segments.append(Segment(seq, start, n))
            break
        # Latest mark b in [start, start + max - 1]: cut after token b.
        hi = start + max_segment_tokens - 1
        idx = bisect.bisect_right(marks, hi) - 1
        if idx >= 0 and marks[idx] >= start:
            end = marks[idx] + 1
        else:
            end = start + max_segment_tokens
        segments.append(Segment(seq, start, end))
        start = end
    return segments


class EmbedderBackend:
    """Pluggable encoder: deterministic per backend_id, never all-zeros."""

    backend_id: str
    dimension: int

    def tokenize(self, text: str) -> TokenSequence:
        raise NotImplementedError

    def encode_segment(self, seg: Segment) -> np.ndarray:
        raise NotImplementedError


class BuiltinTrigramEmbedder(EmbedderBackend):
    """Offline deterministic backend: hashed token-trigram bag, d=256.

    A segment is encoded as the L2-normalized histogram of its token-id
    trigrams, each trigram FNV-1a-hashed (seed ``EMBED_HASH_SEED``) into one
    of 256 buckets. Two leading ``^`` sentinels pad the sequence so every
    non-empty segment yields at least one trigram.
    """

    backend_id = "builtin-trigram-256/v1"
    dimension = 256

    def tokenize(self, text: str) -> TokenSequence:
        return tokenize_text(text)

    def encode_segment(self, seg: Segment) -> np.ndarray:
        padded = np.empty(len(seg) + 2, dtype=np.uint64)
        padded[0] = padded[1] = PAD_TOKEN_ID
        padded[2:] = np.array(seg.tokens, dtype=np.uint64)
        counts = kernels.trigram_bucket_counts(padded, self.dimension, EMBED_HASH_SEED)
        vec = counts.astype(np.float64)
        # Counts are small integers: the squared norm is exact in float64,
        # so both kernel implementations produce bit-identical vectors.
        norm = math.sqrt(float(np.dot(vec, vec)))
        return vec / norm


def builtin_deterministic_embedder() -> BuiltinTrigramEmbedder:
    return BuiltinTrigramEmbedder()


class RemoteEmbedderBackend(EmbedderBackend):
    """Client for an embeddings HTTP service.

    POST {base_url}/embeddings with {"model": ..., "input": [text]} and read
    {"data": [{"embedding": [...]}]}. Tokenization (and therefore the
    segmentation and overflow decisions) runs locally with the shared
    tokenizer; the service only encodes segment text.
    """

    def __init__(self, base_url: str, model: str, dimension: int, timeout_s: float = 30.0):
        import requests

        self.base_url = base_url.rstrip("/")
        self.model = model
        self.dimension = dimension
        self.timeout_s = timeout_s
        self.backend_id = f"remote/{model}"
        self._session = requests.Session()

    def tokenize(self, text: str) -> TokenSequence:
        return tokenize_text(text)

    def encode_segment(self, seg: Segment) -> np.ndarray:
        import requests

        payload = {"model": self.model, "input": [seg.text()]}
        try:
            resp = self._session.post(
                f"{self.base_url}/embeddings", json=payload, timeout=self.timeout_s
            )
        except requests.RequestException as exc:
            raise BackendFailure(f"embedding request failed: {exc}") from exc
        if resp.status_code != 200:
            raise BackendFailure(f"embedding service returned HTTP {resp.status_code}")
        try:
            embedding = resp.json()["data"][0]["embedding"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendFailure(f"malformed embedding response: {exc}") from exc
        vec = np.asarray(embedding, dtype=np.float64)
        if vec.shape != (self.dimension,):
            raise DimensionMismatch(
                f"backend returned dimension {vec.shape}, expected ({self.dimension},)"
            )
        return vec


def _encode_with_retry(
    backend: EmbedderBackend,
    seg: Segment,
    config: EmbedConfig,
    sleep: Callable[[float], None],
) -> np.ndarray:
    delay = config.retry_backoff_s
    for attempt in range(config.retry_attempts):
        try:
            return backend.encode_segment(seg)
        except BackendFailure:
            if attempt + 1 == config.retry_attempts:
                raise
            sleep(delay)
            delay *= 2
    raise AssertionError("unreachable")


def embed_rule(
    rule: DetectionRule,
    backend: EmbedderBackend,
    config: EmbedConfig | None = None,
    rule_set: RuleSet | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> RuleEmbedding:
    """Embed one rule: segment, encode each segment, mean-pool, normalize.

    Token count above the overflow limit short-circuits to the zero vector
    with ``overflow=True``; when ``rule_set`` is given the rule is flagged
    for manual review.
    """
    config = config or EmbedConfig()
    seq = backend.tokenize(rule.canonical_text)
    n_tokens = len(seq.tokens)
    if n_tokens == 0:
        raise EmptySequence(f"rule {rule.id!r} tokenizes to nothing")
    if n_tokens > config.overflow_limit:
        if rule_set is not None and rule.id in rule_set:
            rule_set.flag_rule(rule.id, reason=f"token count {n_tokens} exceeds overflow limit")
        return RuleEmbedding(
            rule_id=rule.id,
            vector=np.zeros(backend.dimension, dtype=np.float64),
            segment_count=0,
            overflow=True,
            backend_id=backend.backend_id,
        )
    segments = segment(seq, config.max_segment_tokens)
    vectors = []
    for seg in segments:
        vec = np.asarray(_encode_with_retry(backend, seg, config, sleep), dtype=np.float64)
        if vec.shape != (backend.dimension,):
            raise DimensionMismatch(
                f"backend {backend.backend_id!r} returned shape {vec.shape}"
            )
        vectors.append(vec)
    pooled = np.mean(vectors, axis=0)
    norm = float(np.linalg.norm(pooled))
    if norm == 0.0:
        raise BackendFailure(f"pooled vector for rule {rule.id!r} has zero norm")
    return RuleEmbedding(
        rule_id=rule.id,
        vector=pooled / norm,
        segment_count=len(segments),
        overflow=False,
        backend_id=backend.backend_id,
    )


@dataclass
class EmbedFailure:
    rule_id: RuleId
    error: str


def embed_set(
    rule_set: RuleSet,
    backend: EmbedderBackend,
    config: EmbedConfig | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> tuple[dict[RuleId, RuleEmbedding], list[EmbedFailure]]:
    """Embed every Active rule; per-rule failures never abort the batch.

    Overflow rules are flagged on the set here, after the (possibly
    parallel) encode phase, to respect the single-writer contract.
    """
    config = config or EmbedConfig()
    rules = rule_set.active_rules()
    embeddings: dict[RuleId, RuleEmbedding] = {}
    failures: list[EmbedFailure] = []

    def _embed(rule: DetectionRule) -> tuple[RuleId, RuleEmbedding | None, str | None]:
        try:
            return rule.id, embed_rule(rule, backend, config, sleep=sleep), None
        except RuleGenieError as exc:
            return rule.id, None, str(exc)

    if config.parallelism > 1 and len(rules) > 1:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            results = list(pool.map(_embed, rules))
    else:
        results = [_embed(r) for r in rules]

    for rule_id, emb, error in results:
        if emb is None:
            failures.append(EmbedFailure(rule_id=rule_id, error=error or "unknown"))
            continue
        embeddings[rule_id] = emb
        if emb.overflow:
            rule_set.flag_rule(rule_id, reason="token count exceeds overflow limit")
    return embeddings, failures


def _text_hash(canonical_text: str) -> str:
    return hashlib.sha256(canonical_text.encode("utf-8")).hexdigest()[:16]


def save_embedding_cache(
    path: str | Path,
    embeddings: Mapping[RuleId, RuleEmbedding],
    rules: RuleSet,
) -> None:
    """Write one JSON record per rule; see load_embedding_cache for the keys."""
    with open(path, "w", encoding="utf-8") as fh:
        for rule_id in sorted(embeddings):
            emb = embeddings[rule_id]
            record = {
                "rule_id": emb.rule_id,
                "backend_id": emb.backend_id,
                "d": int(emb.vector.shape[0]),
                "overflow": emb.overflow,
                "segment_count": emb.segment_count,
                "text_hash": _text_hash(rules.get(rule_id).canonical_text),
                "vector": emb.vector.tolist(),
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_embedding_cache(
    path: str | Path,
    rules: RuleSet,
    backend_id: str,
) -> dict[RuleId, RuleEmbedding]:
    """Load cached embeddings, dropping records whose backend or text changed."""
    embeddings: dict[RuleId, RuleEmbedding] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            rule_id = record["rule_id"]
            if record["backend_id"] != backend_id or rule_id not in rules:
                continue
            if record["text_hash"] != _text_hash(rules.get(rule_id).canonical_text):
                continue
            embeddings[rule_id] = RuleEmbedding(
                rule_id=rule_id,
                vector=np.asarray(record["vector"], dtype=np.float64),
                segment_count=record["segment_count"],
                overflow=record["overflow"],
                backend_id=record["backend_id"],
            )
    return embeddings
