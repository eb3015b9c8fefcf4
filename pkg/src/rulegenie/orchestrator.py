"""Four-stage LLM analysis of a retrieved rule pair.

Stage 1 scores semantic overlap and gates the rest: only pairs at or above
the similarity threshold (inclusive) with overlap affirmed proceed to
hierarchy classification, quality assessment, and a final recommendation.
Chain-of-thought mode runs the stages as four exchanges over one growing
conversation; single-prompt mode asks for all four results in one exchange
and applies the gate afterwards.

Responses must validate against the per-stage JSON schema; invalid ones get
a bounded number of repair retries before MalformedResponse is raised.
"""

from __future__ import annotations

import hashlib
import json
import re
import warnings
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from functools import lru_cache
from importlib import resources

import jsonschema

from rulegenie.llm import LlmClient
from rulegenie.model import DetectionRule, RuleGenieError, RulePair

DEFAULT_GATE_THRESHOLD = 75
REPAIR_RETRIES = 2


class ScoreClampWarning(UserWarning):
    """Semantic score arrived outside [0, 100] and was clamped."""


class ConsistencyWarning(UserWarning):
    """Recommendation contradicts unanimous quality winners; advisory only."""

_SYSTEM_PROMPT = (
    "You are a precise SIEM detection engineering assistant. Always answer "
    "with a single JSON object that matches the requested shape, with no "
    "surrounding prose."
)


class MalformedResponse(RuleGenieError):
    pass


class PromptMode(Enum):
    CHAIN_OF_THOUGHT = "chain_of_thought"
    SINGLE_PROMPT = "single_prompt"


class Relationship(Enum):
    PLATFORM_SPECIFIC_INDEPENDENCE = "platform_specific_independence"
    GENERALIZATION = "generalization"
    CROSS_PLATFORM_DEPENDENCY = "cross_platform_dependency"


class Winner(Enum):
    TARGET = "target"
    CANDIDATE = "candidate"
    TIE = "tie"


class RecommendedAction(Enum):
    KEEP_SUPERIOR = "keep_superior"
    MERGE = "merge"
    KEEP_BOTH = "keep_both"


@dataclass(frozen=True)
class SemanticVerdict:
    score: int
    overlap: bool
    rationale: str

    def __post_init__(self) -> None:
        if not 0 <= self.score <= 100:
            raise ValueError(f"score must be in [0, 100], got {self.score}")


@dataclass(frozen=True)
class HierarchyRelation:
    relationship: Relationship
    general_rule_id: str | None
    rationale: str

    def __post_init__(self) -> None:
        if self.relationship is Relationship.GENERALIZATION and not self.general_rule_id:
            raise ValueError("generalization requires a general_rule_id")


@dataclass(frozen=True)
class QualityAssessment:
    coverage_winner: Winner
    efficiency_winner: Winner
    false_positive_winner: Winner
    notes: str


@dataclass(frozen=True)
class Recommendation:
    action: RecommendedAction
    keep_id: str | None
    retire_id: str | None
    merged_draft: str | None
    confidence: float
    rationale: str

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")
        if self.action is RecommendedAction.KEEP_SUPERIOR:
            if not self.keep_id or not self.retire_id or self.keep_id == self.retire_id:
                raise ValueError("keep_superior requires distinct keep and retire ids")
        elif self.action is RecommendedAction.MERGE:
            if not self.merged_draft:
                raise ValueError("merge requires a merged_draft")


@dataclass(frozen=True)
class Exchange:
    stage: str
    prompt: str
    response: str


@dataclass(frozen=True)
class AnalysisRecord:
    """Outcome of analyzing one rule pair.

    Later-stage fields are populated exactly when the gate passed; a record
    with an ``error`` carries no verdict at all.
    """

    id: str
    target_id: str
    candidate_id: str
    retrieval_score: float
    gate_threshold: int
    gate_passed: bool
    prompt_mode: PromptMode
    model_id: str
    created_at: str
    verdict: SemanticVerdict | None
    hierarchy: HierarchyRelation | None = None
    quality: QualityAssessment | None = None
    recommendation: Recommendation | None = None
    raw_exchanges: tuple[Exchange, ...] = ()
    error: str | None = None

    def __post_init__(self) -> None:
        late = (self.hierarchy, self.quality, self.recommendation)
        if self.gate_passed:
            if any(stage is None for stage in late):
                raise ValueError("gate passed but a later stage result is missing")
        elif any(stage is not None for stage in late):
            raise ValueError("gate failed but a later stage result is present")
        if self.error is not None:
            if self.verdict is not None or self.gate_passed:
                raise ValueError("a failed analysis cannot carry a verdict")
            return
        if self.verdict is None:
            raise ValueError("verdict missing without an error")
        expected = 1
        if self.prompt_mode is PromptMode.CHAIN_OF_THOUGHT and self.gate_passed:
            expected = 4
        if len(self.raw_exchanges) != expected:
            raise ValueError(
                f"{self.prompt_mode.value} with gate_passed={self.gate_passed} "
                f"must record {expected} exchanges, got {len(self.raw_exchanges)}"
            )

    @property
    def pair_key(self) -> tuple[str, str]:
        return tuple(sorted((self.target_id, self.candidate_id)))


def gate(verdict: SemanticVerdict, threshold: int = DEFAULT_GATE_THRESHOLD) -> bool:
    """A pair proceeds only when overlap holds and score meets the threshold."""
    return verdict.overlap and verdict.score >= threshold


_PLACEHOLDER_RE = re.compile(r"\{\{(\w+)\}\}")


@lru_cache(maxsize=None)
def _prompt_text(name: str) -> str:
    return resources.files("rulegenie").joinpath(f"prompts/{name}.txt").read_text("utf-8")


def render_prompt(name: str, values: dict[str, str]) -> str:
    """Fill a template's {{placeholder}} slots; unknown slots are an error."""

    def lookup(match: re.Match) -> str:
        key = match.group(1)
        if key not in values:
            raise KeyError(f"prompt {name!r} references unknown placeholder {key!r}")
        return values[key]

    return _PLACEHOLDER_RE.sub(lookup, _prompt_text(name))


def rule_fence(role: str, rule: DetectionRule) -> str:
    """Delimited rule block shared by every prompt; mock clients parse it."""
    return (
        f"{role} RULE [id={rule.id} platform={rule.platform}]:\n"
        f"<<<RULE\n{rule.canonical_text}\nRULE>>>"
    )


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    text = resources.files("rulegenie").joinpath(f"schemas/{name}.json").read_text("utf-8")
    return json.loads(text)


def _parse_json_object(raw: str) -> dict:
    """Parse a JSON object, tolerating surrounding prose or code fences."""
    try:
        parsed = json.loads(raw)
    except json.JSONDecodeError:
        start, end = raw.find("{"), raw.rfind("}")
        if start < 0 or end <= start:
            raise ValueError("response contains no JSON object")
        parsed = json.loads(raw[start : end + 1])
    if not isinstance(parsed, dict):
        raise ValueError("response JSON is not an object")
    return parsed


def _ask(
    client: LlmClient,
    messages: list[dict],
    schema: dict,
    check=None,
) -> tuple[dict, Exchange]:
    """One stage exchange with schema validation and repair retries.

    The stage prompt must already be the last user message. On a malformed
    response the raw reply plus the validation error are appended and the
    model is asked again, up to REPAIR_RETRIES times.
    """
    stage = str(schema["$id"]).rsplit("/", 1)[-1].replace("-", "_")
    last_error = ""
    for attempt in range(1 + REPAIR_RETRIES):
        raw = client.complete(messages, schema)
        prompt = messages[-1]["content"]
        messages.append({"role": "assistant", "content": raw})
        try:
            payload = _parse_json_object(raw)
            jsonschema.validate(payload, schema)
            if check is not None:
                check(payload)
            return payload, Exchange(stage=stage, prompt=prompt, response=raw)
        except (ValueError, jsonschema.ValidationError) as exc:
            last_error = str(exc).splitlines()[0]
            if attempt < REPAIR_RETRIES:
                messages.append(
                    {
                        "role": "user",
                        "content": (
                            "That response was not usable: "
                            f"{last_error}. Respond again with only the "
                            "requested JSON object."
                        ),
                    }
                )
    raise MalformedResponse(
        f"{stage} response still malformed after {REPAIR_RETRIES} repair retries: {last_error}"
    )


def _pair_values(pair: RulePair) -> dict[str, str]:
    return {
        "target_rule": rule_fence("TARGET", pair.target),
        "candidate_rule": rule_fence("CANDIDATE", pair.candidate),
        "retrieval_score": f"{pair.retrieval_score:.4f}",
    }


def _verdict_from(payload: dict) -> SemanticVerdict:
    score = int(round(payload["score"]))
    if not 0 <= score <= 100:
        clamped = min(100, max(0, score))
        warnings.warn(
            f"semantic score {payload['score']} outside [0, 100], clamped to {clamped}",
            ScoreClampWarning,
            stacklevel=2,
        )
        score = clamped
    return SemanticVerdict(
        score=score, overlap=payload["overlap"], rationale=payload["rationale"]
    )


def _hierarchy_from(payload: dict, pair: RulePair) -> HierarchyRelation:
    relationship = Relationship(payload["relationship"])
    general = payload.get("general_rule")
    if relationship is not Relationship.GENERALIZATION:
        general = None
    return HierarchyRelation(
        relationship=relationship, general_rule_id=general, rationale=payload["rationale"]
    )


def _check_hierarchy(payload: dict, pair: RulePair) -> None:
    if payload["relationship"] == Relationship.GENERALIZATION.value:
        if payload.get("general_rule") not in (pair.target.id, pair.candidate.id):
            raise ValueError("general_rule must name one of the two rules")


def _quality_from(payload: dict) -> QualityAssessment:
    return QualityAssessment(
        coverage_winner=Winner(payload["coverage_winner"]),
        efficiency_winner=Winner(payload["efficiency_winner"]),
        false_positive_winner=Winner(payload["false_positive_winner"]),
        notes=payload["notes"],
    )


def _recommendation_from(payload: dict) -> Recommendation:
    action = RecommendedAction(payload["action"])
    keep = payload.get("keep")
    retire = payload.get("retire")
    if action is RecommendedAction.KEEP_BOTH:
        keep = retire = None
    return Recommendation(
        action=action,
        keep_id=keep,
        retire_id=retire,
        merged_draft=payload.get("merged_draft"),
        confidence=float(payload["confidence"]),
        rationale=payload["rationale"],
    )


def _check_recommendation(payload: dict, pair: RulePair) -> None:
    ids = (pair.target.id, pair.candidate.id)
    if payload["action"] == RecommendedAction.KEEP_SUPERIOR.value:
        keep, retire = payload.get("keep"), payload.get("retire")
        if keep not in ids or retire not in ids or keep == retire:
            raise ValueError("keep_superior must name both rules, keep and retire distinct")
    elif payload["action"] == RecommendedAction.MERGE.value:
        if not payload.get("merged_draft"):
            raise ValueError("merge requires a non-empty merged_draft")


def _advise_consistency(
    quality: QualityAssessment, recommendation: Recommendation, pair: RulePair
) -> None:
    """Advisory only: the model may legitimately weigh metric trade-offs."""
    winners = {
        quality.coverage_winner,
        quality.efficiency_winner,
        quality.false_positive_winner,
    }
    if len(winners) != 1 or Winner.TIE in winners:
        return
    side = winners.pop()
    unanimous = pair.target.id if side is Winner.TARGET else pair.candidate.id
    if (
        recommendation.action is RecommendedAction.KEEP_SUPERIOR
        and recommendation.keep_id != unanimous
    ):
        warnings.warn(
            f"keep_superior keeps {recommendation.keep_id} although quality "
            f"winners unanimously favor {unanimous}",
            ConsistencyWarning,
            stacklevel=2,
        )


def record_id_for(
    pair: RulePair, prompt_mode: PromptMode, model_id: str, threshold: int
) -> str:
    a, b = pair.key
    digest = hashlib.sha256(
        f"{a}|{b}|{prompt_mode.value}|{model_id}|{threshold}".encode("utf-8")
    ).hexdigest()
    return f"ar-{digest[:16]}"


def _now(clock) -> str:
    moment = clock() if clock is not None else datetime.now(timezone.utc)
    return moment.isoformat()


def analyze_pair(
    pair: RulePair,
    client: LlmClient,
    threshold: int = DEFAULT_GATE_THRESHOLD,
    prompt_mode: PromptMode = PromptMode.CHAIN_OF_THOUGHT,
    model_id: str = "mock",
    clock=None,
) -> AnalysisRecord:
    """Run the staged analysis for one pair and return its record.

    Raises MalformedResponse or LlmUnavailable on unrecoverable client
    failures; callers that need an error record instead should wrap this
    with failure_record.
    """
    if prompt_mode is PromptMode.SINGLE_PROMPT:
        return _analyze_single(pair, client, threshold, model_id, clock)
    return _analyze_chain(pair, client, threshold, model_id, clock)


def _analyze_chain(
    pair: RulePair, client: LlmClient, threshold: int, model_id: str, clock
) -> AnalysisRecord:
    values = _pair_values(pair)
    messages = [{"role": "system", "content": _SYSTEM_PROMPT}]
    exchanges: list[Exchange] = []

    messages.append(
        {"role": "user", "content": render_prompt("stage1_semantic", values)}
    )
    semantic_payload, exchange = _ask(client, messages, load_schema("stage1_semantic"))
    exchanges.append(exchange)
    verdict = _verdict_from(semantic_payload)

    base = dict(
        id=record_id_for(pair, PromptMode.CHAIN_OF_THOUGHT, model_id, threshold),
        target_id=pair.target.id,
        candidate_id=pair.candidate.id,
        retrieval_score=pair.retrieval_score,
        gate_threshold=threshold,
        prompt_mode=PromptMode.CHAIN_OF_THOUGHT,
        model_id=model_id,
        created_at=_now(clock),
    )
    if not gate(verdict, threshold):
        return AnalysisRecord(
            gate_passed=False, verdict=verdict, raw_exchanges=tuple(exchanges), **base
        )

    messages.append(
        {"role": "user", "content": render_prompt("stage2_hierarchy", values)}
    )
    hierarchy_payload, exchange = _ask(
        client,
        messages,
        load_schema("stage2_hierarchy"),
        check=lambda payload: _check_hierarchy(payload, pair),
    )
    exchanges.append(exchange)

    values["hierarchy"] = json.dumps(hierarchy_payload, sort_keys=True)
    messages.append(
        {"role": "user", "content": render_prompt("stage3_quality", values)}
    )
    quality_payload, exchange = _ask(client, messages, load_schema("stage3_quality"))
    exchanges.append(exchange)

    values["quality"] = json.dumps(quality_payload, sort_keys=True)
    messages.append(
        {"role": "user", "content": render_prompt("stage4_recommend", values)}
    )
    recommend_payload, exchange = _ask(
        client,
        messages,
        load_schema("stage4_recommend"),
        check=lambda payload: _check_recommendation(payload, pair),
    )
    exchanges.append(exchange)

    quality = _quality_from(quality_payload)
    recommendation = _recommendation_from(recommend_payload)
    _advise_consistency(quality, recommendation, pair)
    return AnalysisRecord(
        gate_passed=True,
        verdict=verdict,
        hierarchy=_hierarchy_from(hierarchy_payload, pair),
        quality=quality,
        recommendation=recommendation,
        raw_exchanges=tuple(exchanges),
        **base,
    )


def _check_single(payload: dict, pair: RulePair) -> None:
    _check_hierarchy(payload["hierarchy"], pair)
    _check_recommendation(payload["recommendation"], pair)


def _analyze_single(
    pair: RulePair, client: LlmClient, threshold: int, model_id: str, clock
) -> AnalysisRecord:
    values = _pair_values(pair)
    messages = [
        {"role": "system", "content": _SYSTEM_PROMPT},
        {"role": "user", "content": render_prompt("single_prompt", values)},
    ]
    payload, exchange = _ask(
        client,
        messages,
        load_schema("single_prompt"),
        check=lambda p: _check_single(p, pair),
    )
    verdict = _verdict_from(payload["semantic"])
    passed = gate(verdict, threshold)
    if passed:
        _advise_consistency(
            _quality_from(payload["quality"]),
            _recommendation_from(payload["recommendation"]),
            pair,
        )
    return AnalysisRecord(
        id=record_id_for(pair, PromptMode.SINGLE_PROMPT, model_id, threshold),
        target_id=pair.target.id,
        candidate_id=pair.candidate.id,
        retrieval_score=pair.retrieval_score,
        gate_threshold=threshold,
        gate_passed=passed,
        prompt_mode=PromptMode.SINGLE_PROMPT,
        model_id=model_id,
        created_at=_now(clock),
        verdict=verdict,
        hierarchy=_hierarchy_from(payload["hierarchy"], pair) if passed else None,
        quality=_quality_from(payload["quality"]) if passed else None,
        recommendation=_recommendation_from(payload["recommendation"]) if passed else None,
        raw_exchanges=(exchange,),
    )


def failure_record(
    pair: RulePair,
    error: str,
    threshold: int = DEFAULT_GATE_THRESHOLD,
    prompt_mode: PromptMode = PromptMode.CHAIN_OF_THOUGHT,
    model_id: str = "mock",
    clock=None,
) -> AnalysisRecord:
    """Record for a pair whose analysis did not produce a verdict."""
    return AnalysisRecord(
        id=record_id_for(pair, prompt_mode, model_id, threshold),
        target_id=pair.target.id,
        candidate_id=pair.candidate.id,
        retrieval_score=pair.retrieval_score,
        gate_threshold=threshold,
        gate_passed=False,
        prompt_mode=prompt_mode,
        model_id=model_id,
        created_at=_now(clock),
        verdict=None,
        error=error,
    )


def record_to_dict(record: AnalysisRecord, include_exchanges: bool = True) -> dict:
    """Plain-dict form used by batch files and the event store."""
    data = {
        "id": record.id,
        "target_id": record.target_id,
        "candidate_id": record.candidate_id,
        "retrieval_score": record.retrieval_score,
        "gate_threshold": record.gate_threshold,
        "gate_passed": record.gate_passed,
        "prompt_mode": record.prompt_mode.value,
        "model_id": record.model_id,
        "created_at": record.created_at,
        "verdict": None,
        "hierarchy": None,
        "quality": None,
        "recommendation": None,
        "error": record.error,
    }
    if record.verdict is not None:
        data["verdict"] = {
            "score": record.verdict.score,
            "overlap": record.verdict.overlap,
            "rationale": record.verdict.rationale,
        }
    if record.hierarchy is not None:
        data["hierarchy"] = {
            "relationship": record.hierarchy.relationship.value,
            "general_rule": record.hierarchy.general_rule_id,
            "rationale": record.hierarchy.rationale,
        }
    if record.quality is not None:
        data["quality"] = {
            "coverage_winner": record.quality.coverage_winner.value,
            "efficiency_winner": record.quality.efficiency_winner.value,
            "false_positive_winner": record.quality.false_positive_winner.value,
            "notes": record.quality.notes,
        }
    if record.recommendation is not None:
        data["recommendation"] = {
            "action": record.recommendation.action.value,
            "keep": record.recommendation.keep_id,
            "retire": record.recommendation.retire_id,
            "merged_draft": record.recommendation.merged_draft,
            "confidence": record.recommendation.confidence,
            "rationale": record.recommendation.rationale,
        }
    if include_exchanges:
        data["raw_exchanges"] = [
            {"stage": e.stage, "prompt": e.prompt, "response": e.response}
            for e in record.raw_exchanges
        ]
    return data


def record_from_dict(data: dict) -> AnalysisRecord:
    verdict = hierarchy = quality = recommendation = None
    if data.get("verdict") is not None:
        verdict = _verdict_from(data["verdict"])
    if data.get("hierarchy") is not None:
        h = data["hierarchy"]
        hierarchy = HierarchyRelation(
            relationship=Relationship(h["relationship"]),
            general_rule_id=h.get("general_rule"),
            rationale=h["rationale"],
        )
    if data.get("quality") is not None:
        quality = _quality_from(data["quality"])
    if data.get("recommendation") is not None:
        recommendation = _recommendation_from(data["recommendation"])
    exchanges = tuple(
        Exchange(stage=e["stage"], prompt=e["prompt"], response=e["response"])
        for e in data.get("raw_exchanges", [])
    )
    return AnalysisRecord(
        id=data["id"],
        target_id=data["target_id"],
        candidate_id=data["candidate_id"],
        retrieval_score=data["retrieval_score"],
        gate_threshold=data["gate_threshold"],
        gate_passed=data["gate_passed"],
        prompt_mode=PromptMode(data["prompt_mode"]),
        model_id=data["model_id"],
        created_at=data["created_at"],
        verdict=verdict,
        hierarchy=hierarchy,
        quality=quality,
        recommendation=recommendation,
        raw_exchanges=exchanges,
        error=data.get("error"),
    )
