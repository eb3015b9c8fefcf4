"""Durable state: an append-only event log with a snapshot for fast reopen.

Every mutation is one framed event: a 4-byte little-endian length, a 4-byte
CRC-32 of the payload bytes, then the JSON payload itself. The log is the
source of truth; replaying it from byte zero reconstructs the full state.
The snapshot is only a cursor (state plus byte offset) and is discarded if
it disagrees with the log.

Truncated frames, CRC mismatches, and undecodable payloads raise CorruptLog
with the byte offset of the offending frame.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import zlib
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from rulegenie.model import (
    DetectionRule,
    NotFound,
    RuleGenieError,
    RuleSet,
    RuleStatus,
    rule_from_dict,
    rule_to_dict,
)
from rulegenie.orchestrator import (
    AnalysisRecord,
    RecommendedAction,
    record_from_dict,
    record_to_dict,
)

_FRAME = struct.Struct("<II")
SNAPSHOT_VERSION = 1

EVENT_RULE_INGESTED = "RuleIngested"
EVENT_RULE_RETIRED = "RuleRetired"
EVENT_RULE_FLAGGED = "RuleFlagged"
EVENT_ANALYSIS_RECORDED = "AnalysisRecorded"
EVENT_DECISION_RECORDED = "DecisionRecorded"
EVENT_MANUAL_REVIEW_NOTED = "ManualReviewNoted"


class CorruptLog(RuleGenieError):
    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class AlreadyDecided(RuleGenieError):
    pass


DECISION_KINDS = ("accept", "reject", "modify_then_accept")
_ACTION_KINDS = ("keep_superior", "merge", "keep_both")


@dataclass(frozen=True)
class DecisionRecord:
    decision_id: str
    analysis_id: str
    decision: str
    analyst: str
    note: str
    decided_at: str
    edited_action: str | None = None

    def __post_init__(self) -> None:
        if self.decision not in DECISION_KINDS:
            raise ValueError(f"decision must be one of {DECISION_KINDS}, got {self.decision!r}")
        if self.decision == "modify_then_accept":
            if self.edited_action not in _ACTION_KINDS:
                raise ValueError(
                    f"modify_then_accept needs an edited_action from {_ACTION_KINDS}"
                )
        elif self.edited_action is not None:
            raise ValueError(f"{self.decision} must not carry an edited_action")


def decision_id_for(analysis_id: str) -> str:
    digest = hashlib.sha256(analysis_id.encode("utf-8")).hexdigest()
    return f"dec-{digest[:16]}"


def decision_to_dict(record: DecisionRecord) -> dict:
    return {
        "decision_id": record.decision_id,
        "analysis_id": record.analysis_id,
        "decision": record.decision,
        "analyst": record.analyst,
        "note": record.note,
        "decided_at": record.decided_at,
        "edited_action": record.edited_action,
    }


@dataclass
class StoreState:
    rule_set: RuleSet = field(default_factory=RuleSet)
    analyses: dict[str, AnalysisRecord] = field(default_factory=dict)
    decisions: dict[str, DecisionRecord] = field(default_factory=dict)
    manual_reviews: dict[str, list[str]] = field(default_factory=dict)


def read_events(path: str | Path):
    """Yield (offset, envelope) per frame; CorruptLog on any damage."""
    with open(path, "rb") as fh:
        offset = 0
        while True:
            header = fh.read(_FRAME.size)
            if not header:
                return
            if len(header) < _FRAME.size:
                raise CorruptLog("truncated frame header", offset)
            length, crc = _FRAME.unpack(header)
            payload = fh.read(length)
            if len(payload) < length:
                raise CorruptLog("truncated frame payload", offset)
            if zlib.crc32(payload) != crc:
                raise CorruptLog("CRC mismatch", offset)
            try:
                envelope = json.loads(payload.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise CorruptLog(f"undecodable event payload: {exc}", offset) from exc
            yield offset, envelope
            offset += _FRAME.size + length


def _apply(state: StoreState, envelope: dict, offset: int) -> None:
    kind = envelope.get("type")
    payload = envelope.get("payload", {})
    try:
        if kind == EVENT_RULE_INGESTED:
            state.rule_set.add_rule(rule_from_dict(payload["rule"]))
        elif kind == EVENT_RULE_RETIRED:
            state.rule_set.retire_rule(payload["rule_id"])
        elif kind == EVENT_RULE_FLAGGED:
            state.rule_set.flag_rule(payload["rule_id"], payload.get("reason", ""))
        elif kind == EVENT_ANALYSIS_RECORDED:
            record = record_from_dict(payload["record"])
            state.analyses[record.id] = record
        elif kind == EVENT_DECISION_RECORDED:
            record = DecisionRecord(
                decision_id=payload["decision_id"],
                analysis_id=payload["analysis_id"],
                decision=payload["decision"],
                analyst=payload.get("analyst", ""),
                note=payload.get("note", ""),
                decided_at=payload["decided_at"],
                edited_action=payload.get("edited_action"),
            )
            if record.analysis_id not in state.analyses:
                raise NotFound(f"decision references unknown analysis {record.analysis_id!r}")
            state.decisions[record.analysis_id] = record
        elif kind == EVENT_MANUAL_REVIEW_NOTED:
            rule_id = payload["rule_id"]
            state.rule_set.get(rule_id)
            state.manual_reviews.setdefault(rule_id, []).append(payload.get("note", ""))
        else:
            raise ValueError(f"unknown event type {kind!r}")
    except (RuleGenieError, ValueError, KeyError) as exc:
        raise CorruptLog(f"event cannot be applied: {exc}", offset) from exc


class Store:
    """Event-sourced store for rules, analyses, and reviewer decisions.

    Open with Store.open; every public mutator validates against current
    state, appends the event, then applies it, so the log never contains an
    event that state rejected.
    """

    def __init__(self, directory: str | Path, clock=None) -> None:
        self.directory = Path(directory)
        self.log_path = self.directory / "events.log"
        self.snapshot_path = self.directory / "snapshot.json"
        self._clock = clock
        self.state = StoreState()
        self.event_count = 0
        self._log_size = 0

    def _now(self) -> str:
        moment = self._clock() if self._clock is not None else datetime.now(timezone.utc)
        return moment.isoformat()

    @classmethod
    def open(cls, directory: str | Path, clock=None) -> "Store":
        store = cls(directory, clock=clock)
        store.directory.mkdir(parents=True, exist_ok=True)
        if not store.log_path.exists():
            store.log_path.touch()
            return store
        start_offset = store._load_snapshot()
        actual_size = store.log_path.stat().st_size
        if start_offset > actual_size:
            # snapshot is ahead of the log; distrust it entirely
            store.state = StoreState()
            store.event_count = 0
            start_offset = 0
        store._replay_from(start_offset)
        store._log_size = actual_size
        return store

    def _load_snapshot(self) -> int:
        """Restore state from the snapshot; returns the log offset to resume at."""
        if not self.snapshot_path.exists():
            return 0
        try:
            data = json.loads(self.snapshot_path.read_text(encoding="utf-8"))
            if data.get("version") != SNAPSHOT_VERSION:
                return 0
            state = StoreState()
            for rule_data in data["rules"]:
                state.rule_set.add_rule(rule_from_dict(rule_data))
            # rebuilding bumped the counter once per rule; restore the
            # revision the live set had when the snapshot was written
            state.rule_set.revision = int(data["revision"])
            for record_data in data["analyses"]:
                record = record_from_dict(record_data)
                state.analyses[record.id] = record
            for decision_data in data["decisions"]:
                record = DecisionRecord(**decision_data)
                state.decisions[record.analysis_id] = record
            state.manual_reviews = {
                k: list(v) for k, v in data.get("manual_reviews", {}).items()
            }
        except (KeyError, TypeError, ValueError, RuleGenieError, json.JSONDecodeError):
            return 0
        self.state = state
        self.event_count = int(data["event_count"])
        return int(data["byte_offset"])

    def _replay_from(self, start_offset: int) -> None:
        for offset, envelope in read_events(self.log_path):
            if offset < start_offset:
                continue
            _apply(self.state, envelope, offset)
            self.event_count += 1

    def _append(self, kind: str, payload: dict) -> dict:
        envelope = {
            "seq": self.event_count,
            "type": kind,
            "at": self._now(),
            "payload": payload,
        }
        data = json.dumps(envelope, sort_keys=True, separators=(",", ":")).encode("utf-8")
        with open(self.log_path, "ab") as fh:
            fh.write(_FRAME.pack(len(data), zlib.crc32(data)))
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        self.event_count += 1
        self._log_size += _FRAME.size + len(data)
        return envelope

    def save_snapshot(self) -> None:
        data = {
            "version": SNAPSHOT_VERSION,
            "revision": self.state.rule_set.revision,
            "event_count": self.event_count,
            "byte_offset": self._log_size,
            "written_at": self._now(),
            "rules": [rule_to_dict(r) for r in self.state.rule_set],
            "analyses": [
                record_to_dict(r)
                for _, r in sorted(self.state.analyses.items())
            ],
            "decisions": [
                decision_to_dict(d) for _, d in sorted(self.state.decisions.items())
            ],
            "manual_reviews": dict(sorted(self.state.manual_reviews.items())),
        }
        tmp = self.snapshot_path.with_suffix(".json.tmp")
        tmp.write_text(
            json.dumps(data, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        os.replace(tmp, self.snapshot_path)

    # mutators: validate, mutate, append

    def ingest_rule(self, rule: DetectionRule) -> None:
        self.state.rule_set.add_rule(rule)
        self._append(EVENT_RULE_INGESTED, {"rule": rule_to_dict(rule)})

    def retire_rule(self, rule_id: str, reason: str = "") -> None:
        self.state.rule_set.retire_rule(rule_id, reason)
        self._append(EVENT_RULE_RETIRED, {"rule_id": rule_id, "reason": reason})

    def flag_rule(self, rule_id: str, reason: str = "") -> None:
        already = self.state.rule_set.get(rule_id).status is RuleStatus.FLAGGED_FOR_MANUAL_REVIEW
        self.state.rule_set.flag_rule(rule_id, reason)
        if not already:
            self._append(EVENT_RULE_FLAGGED, {"rule_id": rule_id, "reason": reason})

    def reconcile_flags(self, previously_flagged: set[str], reason: str) -> list[str]:
        """Log flag events for rules flagged outside the store (pipeline runs)."""
        newly = [
            r.id
            for r in self.state.rule_set
            if r.status is RuleStatus.FLAGGED_FOR_MANUAL_REVIEW
            and r.id not in previously_flagged
        ]
        for rule_id in sorted(newly):
            self._append(EVENT_RULE_FLAGGED, {"rule_id": rule_id, "reason": reason})
        return newly

    def record_analysis(self, record: AnalysisRecord) -> None:
        if record.id in self.state.analyses:
            return
        self.state.analyses[record.id] = record
        self._append(EVENT_ANALYSIS_RECORDED, {"record": record_to_dict(record)})

    def decide(
        self,
        analysis_id: str,
        decision: str,
        analyst: str = "",
        note: str = "",
        edited_action: str | None = None,
    ) -> DecisionRecord:
        """Record a terminal decision; accepting keep_superior retires the loser.

        modify_then_accept switches the action kind only and never mutates the
        rule set: enacting an edited action is the analyst's manual follow-up.
        """
        record = self.state.analyses.get(analysis_id)
        if record is None:
            raise NotFound(f"no analysis {analysis_id!r}")
        if analysis_id in self.state.decisions:
            raise AlreadyDecided(f"analysis {analysis_id!r} already has a decision")
        if record.recommendation is None:
            raise NotFound(f"analysis {analysis_id!r} carries no recommendation")
        if (
            decision == "modify_then_accept"
            and edited_action == record.recommendation.action.value
        ):
            raise ValueError(
                "modify_then_accept must change the action; use accept instead"
            )
        decision_record = DecisionRecord(
            decision_id=decision_id_for(analysis_id),
            analysis_id=analysis_id,
            decision=decision,
            analyst=analyst,
            note=note,
            decided_at=self._now(),
            edited_action=edited_action,
        )
        self.state.decisions[analysis_id] = decision_record
        self._append(EVENT_DECISION_RECORDED, decision_to_dict(decision_record))
        if (
            decision == "accept"
            and record.recommendation.action is RecommendedAction.KEEP_SUPERIOR
        ):
            retire_id = record.recommendation.retire_id
            rule = self.state.rule_set.get(retire_id)
            if rule.status is not RuleStatus.RETIRED:
                self.retire_rule(retire_id, reason=f"superseded per analysis {analysis_id}")
        return decision_record

    def note_manual_review(self, rule_id: str, note: str = "") -> None:
        self.state.rule_set.get(rule_id)
        self.state.manual_reviews.setdefault(rule_id, []).append(note)
        self._append(EVENT_MANUAL_REVIEW_NOTED, {"rule_id": rule_id, "note": note})

    def pending_recommendations(self) -> list[AnalysisRecord]:
        """Gate-passed analyses awaiting a reviewer decision, stable order."""
        return [
            record
            for _, record in sorted(self.state.analyses.items())
            if record.gate_passed and record.id not in self.state.decisions
        ]

    def flagged_rules(self) -> list[DetectionRule]:
        return [
            rule
            for rule in self.state.rule_set
            if rule.status is RuleStatus.FLAGGED_FOR_MANUAL_REVIEW
        ]
