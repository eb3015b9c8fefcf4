"""Normalized detection-rule model shared by every other module.

A DetectionRule is an immutable value object; the RuleSet is the single
mutable container, with a monotonically increasing revision counter and
soft-delete (retire) semantics so analysis records stay referentially
intact.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterator

# Rule ids are opaque strings, stable across runs.
RuleId = str


class RuleGenieError(Exception):
    """Base class for all domain errors raised by this package."""


class DuplicateId(RuleGenieError):
    """An id collision, signalling re-ingestion of an existing rule."""


class NotFound(RuleGenieError):
    pass


class AlreadyRetired(RuleGenieError):
    pass


class RuleFormat(Enum):
    SIGMA = "sigma"
    SPLUNK = "splunk"
    AQL = "aql"


class RuleOrigin(Enum):
    NEW = "new"
    EXISTING = "existing"


class RuleStatus(Enum):
    ACTIVE = "active"
    RETIRED = "retired"
    FLAGGED_FOR_MANUAL_REVIEW = "flagged"


def derive_rule_id(raw_text: str) -> RuleId:
    """Derive a content-hash id from the raw source bytes.

    Uses the raw bytes, not the canonical text, so cosmetic normalization
    changes never alter identity.
    """
    return hashlib.sha256(raw_text.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class DetectionRule:
    """One SIEM rule in any supported format, normalized for analysis.

    ``raw_text`` preserves the source byte-for-byte; ``canonical_text`` is
    the whitespace-normalized detection logic used for embedding and
    prompting. ``origin`` is fixed at ingestion; ``status`` only changes
    through RuleSet operations.
    """

    id: RuleId
    format: RuleFormat
    title: str
    description: str
    raw_text: str
    canonical_text: str
    platform: str = ""
    tags: tuple[str, ...] = ()
    origin: RuleOrigin = RuleOrigin.EXISTING
    status: RuleStatus = RuleStatus.ACTIVE

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("rule id must be non-empty")
        if self.status is RuleStatus.ACTIVE and not self.canonical_text:
            raise ValueError(f"active rule {self.id!r} has empty canonical_text")


@dataclass(frozen=True)
class RulePair:
    """A (target, candidate) pair produced by top-k retrieval.

    The unordered key deduplicates directions: (a, b) and (b, a) are the
    same pair for analysis purposes.
    """

    target: DetectionRule
    candidate: DetectionRule
    retrieval_score: float

    def __post_init__(self) -> None:
        if self.target.id == self.candidate.id:
            raise ValueError("pair target and candidate must differ")
        if not -1.0 <= self.retrieval_score <= 1.0:
            raise ValueError(f"retrieval_score out of [-1, 1]: {self.retrieval_score}")

    @property
    def key(self) -> tuple[RuleId, RuleId]:
        a, b = sorted((self.target.id, self.candidate.id))
        return (a, b)


@dataclass
class RuleSet:
    """Id-keyed collection of rules with a revision bumped on every mutation.

    Single-writer: callers serialize mutations. Reads hand out the frozen
    DetectionRule values, so a captured iteration result is a consistent
    snapshot.
    """

    _rules: dict[RuleId, DetectionRule] = field(default_factory=dict)
    revision: int = 0

    def __len__(self) -> int:
        return len(self._rules)

    def __contains__(self, rule_id: RuleId) -> bool:
        return rule_id in self._rules

    def __iter__(self) -> Iterator[DetectionRule]:
        return iter(list(self._rules.values()))

    def get(self, rule_id: RuleId) -> DetectionRule:
        try:
            return self._rules[rule_id]
        except KeyError:
            raise NotFound(f"unknown rule id {rule_id!r}") from None

    def ids(self) -> list[RuleId]:
        return sorted(self._rules)

    def active_rules(self) -> list[DetectionRule]:
        """Rules eligible for embedding and retrieval, sorted by id."""
        return sorted(
            (r for r in self._rules.values() if r.status is RuleStatus.ACTIVE),
            key=lambda r: r.id,
        )

    def active_ids(self) -> set[RuleId]:
        return {r.id for r in self._rules.values() if r.status is RuleStatus.ACTIVE}

    def add_rule(self, rule: DetectionRule) -> None:
        if rule.id in self._rules:
            raise DuplicateId(f"rule id {rule.id!r} already present")
        self._rules[rule.id] = rule
        self.revision += 1

    def retire_rule(self, rule_id: RuleId, reason: str = "") -> None:
        """Soft-delete: the rule stays readable but leaves the retrieval universe."""
        rule = self.get(rule_id)
        if rule.status is RuleStatus.RETIRED:
            raise AlreadyRetired(f"rule {rule_id!r} is already retired")
        self._rules[rule_id] = replace(rule, status=RuleStatus.RETIRED)
        self.revision += 1

    def flag_rule(self, rule_id: RuleId, reason: str = "") -> None:
        """Mark a rule for manual review (the embedding overflow path)."""
        rule = self.get(rule_id)
        if rule.status is RuleStatus.RETIRED:
            raise AlreadyRetired(f"rule {rule_id!r} is retired and cannot be flagged")
        if rule.status is RuleStatus.FLAGGED_FOR_MANUAL_REVIEW:
            return
        self._rules[rule_id] = replace(rule, status=RuleStatus.FLAGGED_FOR_MANUAL_REVIEW)
        self.revision += 1


def rule_to_dict(rule: DetectionRule) -> dict:
    return {
        "id": rule.id,
        "format": rule.format.value,
        "title": rule.title,
        "description": rule.description,
        "raw_text": rule.raw_text,
        "canonical_text": rule.canonical_text,
        "platform": rule.platform,
        "tags": list(rule.tags),
        "origin": rule.origin.value,
        "status": rule.status.value,
    }


def rule_from_dict(data: dict) -> DetectionRule:
    return DetectionRule(
        id=data["id"],
        format=RuleFormat(data["format"]),
        title=data["title"],
        description=data["description"],
        raw_text=data["raw_text"],
        canonical_text=data["canonical_text"],
        platform=data.get("platform", ""),
        tags=tuple(data.get("tags", ())),
        origin=RuleOrigin(data.get("origin", RuleOrigin.EXISTING.value)),
        status=RuleStatus(data.get("status", RuleStatus.ACTIVE.value)),
    )
