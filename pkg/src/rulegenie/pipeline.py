"""Batch pipeline: embed, retrieve top-k candidates, analyze each pair.

Prospective runs compare incoming rules against the existing library;
retrospective runs sweep the whole library against itself. Both dedupe
unordered pairs, honor a resumption skip set, and produce deterministically
ordered records so reruns with the same inputs are byte-identical.

Retrieval is the point: analyzing only the top-k neighbors per target costs
n*min(k, m) analyses instead of the exhaustive n*m.
"""

from __future__ import annotations

import dataclasses
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from rulegenie.embedding import (
    EmbedConfig,
    EmbedderBackend,
    EmbedFailure,
    RuleEmbedding,
    embed_set,
)
from rulegenie.llm import LlmClient, LlmUnavailable
from rulegenie.model import DetectionRule, NotFound, RuleOrigin, RulePair, RuleSet
from rulegenie.orchestrator import (
    DEFAULT_GATE_THRESHOLD,
    AnalysisRecord,
    MalformedResponse,
    PromptMode,
    analyze_pair,
    failure_record,
    record_from_dict,
    record_to_dict,
)
from rulegenie.similarity import SimilarityIndex

DEFAULT_TOP_K = 5

ProgressFn = Callable[[int, int], None]


@dataclass(frozen=True)
class PipelineConfig:
    k: int = DEFAULT_TOP_K
    threshold: int = DEFAULT_GATE_THRESHOLD
    prompt_mode: PromptMode = PromptMode.CHAIN_OF_THOUGHT
    max_segment_tokens: int = 512
    overflow_limit: int = 4096
    parallelism: int = 4
    model_id: str = "mock-heuristic"

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if not 0 <= self.threshold <= 100:
            raise ValueError("threshold must be in [0, 100]")
        if self.max_segment_tokens < 1:
            raise ValueError("max_segment_tokens must be at least 1")
        if self.max_segment_tokens > self.overflow_limit:
            raise ValueError("max_segment_tokens must not exceed overflow_limit")
        if self.parallelism < 1:
            raise ValueError("parallelism must be at least 1")

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "PipelineConfig":
        """Load config JSON; keyword overrides (non-None) win over the file."""
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ValueError(f"{path}: config must be a JSON object")
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
        if "prompt_mode" in data:
            data["prompt_mode"] = PromptMode(data["prompt_mode"])
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)

    def replace(self, **overrides) -> "PipelineConfig":
        return dataclasses.replace(
            self, **{k: v for k, v in overrides.items() if v is not None}
        )

    def embed_config(self) -> EmbedConfig:
        return EmbedConfig(
            max_segment_tokens=self.max_segment_tokens,
            overflow_limit=self.overflow_limit,
            parallelism=self.parallelism,
        )


def call_budget(n_targets: int, n_candidates: int, k: int) -> tuple[int, int]:
    """(analyses with top-k retrieval, analyses for the exhaustive sweep)."""
    return n_targets * min(k, n_candidates), n_targets * n_candidates


@dataclass
class BatchResult:
    records: list[AnalysisRecord]
    skipped_overflow: list[str] = field(default_factory=list)
    llm_call_count: int = 0
    retrieval_count: int = 0
    wall_time: float = 0.0
    embed_failures: list[EmbedFailure] = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    @property
    def gate_passed_records(self) -> list[AnalysisRecord]:
        return [r for r in self.records if r.gate_passed]


def build_pairs(
    targets: list[DetectionRule],
    index: SimilarityIndex,
    embeddings: dict[str, RuleEmbedding],
    k: int,
    rule_set: RuleSet,
    skip_keys: set[tuple[str, str]] | None = None,
) -> tuple[list[RulePair], int]:
    """Top-k retrieval per target, deduplicated over unordered pairs.

    Returns the pairs plus the number of retrieval queries issued. Targets
    whose embedding overflowed never query: a zero vector has no meaningful
    neighbors and the rule is already flagged for manual review.
    """
    skip_keys = skip_keys or set()
    seen: set[tuple[str, str]] = set()
    pairs: list[RulePair] = []
    queries = 0
    for target in sorted(targets, key=lambda r: r.id):
        embedding = embeddings.get(target.id)
        if embedding is None or embedding.overflow:
            continue
        queries += 1
        for neighbor in index.top_k(embedding, k):
            pair = RulePair(
                target=target,
                candidate=rule_set.get(neighbor.rule_id),
                retrieval_score=neighbor.score,
            )
            if pair.key in seen or pair.key in skip_keys:
                continue
            seen.add(pair.key)
            pairs.append(pair)
    return pairs, queries


def analyze_pairs(
    pairs: list[RulePair],
    client: LlmClient,
    config: PipelineConfig,
    clock=None,
    progress: ProgressFn | None = None,
) -> list[AnalysisRecord]:
    """Analyze pairs with bounded parallelism; failures become error records."""
    planned = len(pairs)
    done = 0

    def one(pair: RulePair) -> AnalysisRecord:
        try:
            return analyze_pair(
                pair,
                client,
                threshold=config.threshold,
                prompt_mode=config.prompt_mode,
                model_id=config.model_id,
                clock=clock,
            )
        except (MalformedResponse, LlmUnavailable) as exc:
            return failure_record(
                pair,
                error=f"{type(exc).__name__}: {exc}",
                threshold=config.threshold,
                prompt_mode=config.prompt_mode,
                model_id=config.model_id,
                clock=clock,
            )

    records: list[AnalysisRecord] = []
    if config.parallelism == 1 or len(pairs) <= 1:
        for pair in pairs:
            records.append(one(pair))
            done += 1
            if progress is not None:
                progress(done, planned)
    else:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            for record in pool.map(one, pairs):
                records.append(record)
                done += 1
                if progress is not None:
                    progress(done, planned)
    records.sort(key=lambda r: (r.pair_key, r.id))
    return records


def _run(
    targets: list[DetectionRule],
    candidates: list[DetectionRule],
    rule_set: RuleSet,
    backend: EmbedderBackend,
    client: LlmClient,
    config: PipelineConfig,
    clock,
    skip_keys: set[tuple[str, str]] | None,
    embeddings: dict[str, RuleEmbedding] | None,
    mode: str,
    progress: ProgressFn | None = None,
) -> BatchResult:
    started = time.perf_counter()
    needed = {r.id: r for r in targets}
    needed.update({r.id: r for r in candidates})
    embed_failures: list[EmbedFailure] = []
    if embeddings is None:
        embeddings = {}
    missing = [rule_id for rule_id in needed if rule_id not in embeddings]
    if missing:
        subset = RuleSet()
        for rule_id in missing:
            subset.add_rule(needed[rule_id])
        fresh, embed_failures = embed_set(
            subset, backend, config=config.embed_config()
        )
        embeddings = {**embeddings, **fresh}
    # overflow flags must land on the authoritative set, whether the
    # embedding was computed here or loaded from a cache
    for rule_id, emb in embeddings.items():
        if emb.overflow and rule_id in needed:
            rule_set.flag_rule(rule_id, reason="token count exceeds overflow limit")

    candidate_ids = {c.id for c in candidates}
    candidate_embeddings = {
        rule_id: emb
        for rule_id, emb in embeddings.items()
        if rule_id in candidate_ids and not emb.overflow
    }
    index = SimilarityIndex.refresh(candidate_embeddings, rule_set)
    pairs, retrieval_count = build_pairs(
        targets, index, embeddings, config.k, rule_set, skip_keys
    )
    calls_before = dict(client.calls_by_stage)
    records = analyze_pairs(pairs, client, config, clock, progress)

    skipped_overflow = sorted(
        rule.id
        for rule in targets
        if rule.id in embeddings and embeddings[rule.id].overflow
    )
    budget_topk, budget_full = call_budget(len(targets), len(candidates), config.k)
    counters = {
        stage: count - calls_before.get(stage, 0)
        for stage, count in sorted(client.calls_by_stage.items())
        if count - calls_before.get(stage, 0)
    }
    llm_call_count = sum(counters.values())
    stats = {
        "mode": mode,
        "n_targets": len(targets),
        "n_candidates": len(candidates),
        "k": config.k,
        "threshold": config.threshold,
        "prompt_mode": config.prompt_mode.value,
        "pairs_analyzed": len(records),
        "pairs_skipped": len(skip_keys or ()),
        "gate_passed": sum(r.gate_passed for r in records),
        "failures": sum(r.error is not None for r in records),
        "skipped_overflow": skipped_overflow,
        "embed_failures": len(embed_failures),
        "retrieval_count": retrieval_count,
        "llm_call_count": llm_call_count,
        "budget_with_retrieval": budget_topk,
        "budget_exhaustive": budget_full,
        "calls_by_stage": counters,
    }
    return BatchResult(
        records=records,
        skipped_overflow=skipped_overflow,
        llm_call_count=llm_call_count,
        retrieval_count=retrieval_count,
        wall_time=time.perf_counter() - started,
        embed_failures=embed_failures,
        stats=stats,
    )


def run_prospective(
    rule_set: RuleSet,
    backend: EmbedderBackend,
    client: LlmClient,
    config: PipelineConfig | None = None,
    clock=None,
    skip_keys: set[tuple[str, str]] | None = None,
    embeddings: dict[str, RuleEmbedding] | None = None,
    progress: ProgressFn | None = None,
) -> BatchResult:
    """Compare new-origin rules against the existing active library."""
    config = config or PipelineConfig()
    active = rule_set.active_rules()
    targets = [r for r in active if r.origin is RuleOrigin.NEW]
    candidates = [r for r in active if r.origin is RuleOrigin.EXISTING]
    return _run(
        targets, candidates, rule_set, backend, client, config, clock,
        skip_keys, embeddings, mode="prospective", progress=progress,
    )


def run_retrospective(
    rule_set: RuleSet,
    backend: EmbedderBackend,
    client: LlmClient,
    config: PipelineConfig | None = None,
    clock=None,
    skip_keys: set[tuple[str, str]] | None = None,
    embeddings: dict[str, RuleEmbedding] | None = None,
    progress: ProgressFn | None = None,
) -> BatchResult:
    """Sweep the whole active library against itself."""
    config = config or PipelineConfig()
    active = rule_set.active_rules()
    return _run(
        active, active, rule_set, backend, client, config, clock,
        skip_keys, embeddings, mode="retrospective", progress=progress,
    )


def run_targeted(
    rule_set: RuleSet,
    target_ids: list[str],
    backend: EmbedderBackend,
    client: LlmClient,
    config: PipelineConfig | None = None,
    clock=None,
    skip_keys: set[tuple[str, str]] | None = None,
    embeddings: dict[str, RuleEmbedding] | None = None,
    progress: ProgressFn | None = None,
) -> BatchResult:
    """Compare the named rules against the rest of the active library.

    This is the per-rule prospective path used when a single new rule
    arrives and the whole new-origin cohort should not be re-analyzed.
    """
    config = config or PipelineConfig()
    wanted = set(target_ids)
    active = rule_set.active_rules()
    targets = [r for r in active if r.id in wanted]
    missing = wanted - {r.id for r in targets}
    if missing:
        raise NotFound(f"target rules not active or unknown: {sorted(missing)}")
    candidates = [r for r in active if r.id not in wanted]
    return _run(
        targets, candidates, rule_set, backend, client, config, clock,
        skip_keys, embeddings, mode="prospective", progress=progress,
    )


def write_batch(records: list[AnalysisRecord], path: str | Path) -> None:
    """One sorted JSON record per line; stable across reruns."""
    ordered = sorted(records, key=lambda r: (r.pair_key, r.id))
    with open(path, "w", encoding="utf-8") as fh:
        for record in ordered:
            fh.write(json.dumps(record_to_dict(record), sort_keys=True))
            fh.write("\n")


def read_batch(path: str | Path) -> list[AnalysisRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(record_from_dict(json.loads(line)))
    return records


def resume_keys(path: str | Path) -> tuple[list[AnalysisRecord], set[tuple[str, str]]]:
    """Existing records plus their pair keys, for skip-ahead resumption."""
    if not Path(path).exists():
        return [], set()
    records = read_batch(path)
    return records, {r.pair_key for r in records}
