from __future__ import annotations

import warnings

import pytest

from rulegenie.llm import MockLlmClient
from rulegenie.model import RulePair
from rulegenie.orchestrator import (
    AnalysisRecord,
    ConsistencyWarning,
    HierarchyRelation,
    MalformedResponse,
    PromptMode,
    Recommendation,
    RecommendedAction,
    Relationship,
    ScoreClampWarning,
    SemanticVerdict,
    Winner,
    analyze_pair,
    failure_record,
    gate,
    record_from_dict,
    record_id_for,
    record_to_dict,
    render_prompt,
    rule_fence,
)

from conftest import FROZEN_MOMENT, frozen_clock, make_rule


def _pair(target_text="a b c d", candidate_text="a b c d", score=0.9, **kw):
    target = make_rule(kw.get("target_id", "t-1"), target_text,
                       platform=kw.get("target_platform", "windows"))
    candidate = make_rule(kw.get("candidate_id", "c-1"), candidate_text,
                          platform=kw.get("candidate_platform", "windows"))
    return RulePair(target=target, candidate=candidate, retrieval_score=score)


def _verdict(score=80, overlap=True):
    return SemanticVerdict(score=score, overlap=overlap, rationale="r")


_HIERARCHY = HierarchyRelation(
    relationship=Relationship.CROSS_PLATFORM_DEPENDENCY, general_rule_id=None, rationale="r"
)


def _quality(cov=Winner.TIE, eff=Winner.TIE, fp=Winner.TIE):
    from rulegenie.orchestrator import QualityAssessment

    return QualityAssessment(
        coverage_winner=cov, efficiency_winner=eff, false_positive_winner=fp, notes="n"
    )


_KEEP_BOTH = Recommendation(
    action=RecommendedAction.KEEP_BOTH, keep_id=None, retire_id=None,
    merged_draft=None, confidence=0.5, rationale="r",
)


def test_gate_threshold_is_inclusive():
    assert gate(_verdict(score=75)) is True
    assert gate(_verdict(score=74)) is False
    assert gate(_verdict(score=100, overlap=False)) is False
    assert gate(_verdict(score=60), threshold=60) is True


def test_render_prompt_fills_slots_and_rejects_unknown():
    fence = rule_fence("TARGET", make_rule("t-9", "index=x"))
    text = render_prompt(
        "stage1_semantic",
        {"target_rule": fence, "candidate_rule": "CAND", "retrieval_score": "0.9000"},
    )
    assert "TARGET RULE [id=t-9 platform=windows]:" in text
    assert "{{" not in text
    with pytest.raises(KeyError, match="unknown placeholder"):
        render_prompt("stage1_semantic", {"candidate_rule": "x"})


def test_rule_fence_shape():
    fence = rule_fence("CANDIDATE", make_rule("c-2", "line1\nline2", platform="linux"))
    assert fence == (
        "CANDIDATE RULE [id=c-2 platform=linux]:\n<<<RULE\nline1\nline2\nRULE>>>"
    )


def test_chain_mode_full_run():
    client = MockLlmClient()
    record = analyze_pair(_pair("a b c d", "a b c"), client, clock=frozen_clock)
    assert record.gate_passed
    assert record.verdict.score == 75
    assert [e.stage for e in record.raw_exchanges] == [
        "stage1_semantic", "stage2_hierarchy", "stage3_quality", "stage4_recommend",
    ]
    assert record.hierarchy.relationship is Relationship.GENERALIZATION
    assert record.recommendation.action is RecommendedAction.KEEP_SUPERIOR
    assert record.recommendation.keep_id == "t-1"
    assert record.created_at == FROZEN_MOMENT.isoformat()
    assert client.calls_total == 4


def test_chain_mode_gate_failure_stops_after_stage1():
    client = MockLlmClient()
    record = analyze_pair(_pair("a b", "x y"), client)
    assert not record.gate_passed
    assert record.verdict is not None
    assert record.hierarchy is None
    assert record.quality is None
    assert record.recommendation is None
    assert len(record.raw_exchanges) == 1
    assert client.calls_total == 1


def test_single_mode_is_one_exchange_either_way():
    passing = analyze_pair(
        _pair("a b c d", "a b c"), MockLlmClient(), prompt_mode=PromptMode.SINGLE_PROMPT
    )
    assert passing.gate_passed
    assert len(passing.raw_exchanges) == 1
    assert passing.recommendation is not None

    client = MockLlmClient()
    failing = analyze_pair(_pair("a b", "x y"), client, prompt_mode=PromptMode.SINGLE_PROMPT)
    assert not failing.gate_passed
    assert failing.verdict.score == 0
    # the one reply contained all stages, but the gate drops them
    assert failing.hierarchy is None and failing.recommendation is None
    assert len(failing.raw_exchanges) == 1
    assert client.calls_total == 1


def test_record_id_is_deterministic_and_order_free():
    pair = _pair()
    flipped = _pair(target_id="c-1", candidate_id="t-1")
    rid = record_id_for(pair, PromptMode.CHAIN_OF_THOUGHT, "mock", 75)
    assert rid == record_id_for(flipped, PromptMode.CHAIN_OF_THOUGHT, "mock", 75)
    assert rid.startswith("ar-") and len(rid) == 19
    assert rid != record_id_for(pair, PromptMode.SINGLE_PROMPT, "mock", 75)
    assert rid != record_id_for(pair, PromptMode.CHAIN_OF_THOUGHT, "mock", 80)
    assert rid != record_id_for(pair, PromptMode.CHAIN_OF_THOUGHT, "other", 75)

    record = analyze_pair(pair, MockLlmClient())
    assert record.id == rid
    assert record.pair_key == ("c-1", "t-1")


def test_repair_retries_recover_from_garbled_output():
    client = MockLlmClient(garble={"stage1_semantic": 2})
    record = analyze_pair(_pair("a b", "a b"), client)
    assert record.gate_passed
    # two garbled replies plus the good one
    assert client.calls_by_stage["stage1_semantic"] == 3


def test_repair_retries_exhaust_to_malformed_response():
    client = MockLlmClient(garble={"stage1_semantic": 3})
    with pytest.raises(MalformedResponse, match="stage1_semantic"):
        analyze_pair(_pair("a b", "a b"), client)
    assert client.calls_by_stage["stage1_semantic"] == 3


class _Recorder(MockLlmClient):
    """Mock that snapshots the conversation at each call."""

    def __init__(self, **kw):
        super().__init__(**kw)
        self.seen: list[list[dict]] = []

    def _complete(self, messages, schema):
        self.seen.append([dict(m) for m in messages])
        return super()._complete(messages, schema)


def test_repair_appends_bad_reply_and_correction():
    client = _Recorder(garble={"stage1_semantic": 1})
    analyze_pair(_pair("a b", "a b"), client)
    first, second = client.seen[0], client.seen[1]
    assert len(second) == len(first) + 2
    assert second[-2]["role"] == "assistant"
    assert "structured verdict" in second[-2]["content"]
    assert second[-1]["role"] == "user"
    assert "not usable" in second[-1]["content"]


def test_chain_conversation_grows_across_stages():
    client = _Recorder()
    analyze_pair(_pair("a b c d", "a b c"), client)
    assert len(client.seen) == 4
    # each stage sees the prior exchanges plus its own prompt
    lengths = [len(m) for m in client.seen]
    assert lengths == [2, 4, 6, 8]
    assert client.seen[0][0]["role"] == "system"


def _scripted_full(pair_key, score, keep="t-1", retire="c-1"):
    return {
        (pair_key, "stage1_semantic"): {
            "score": score, "overlap": True, "rationale": "scripted"
        },
        (pair_key, "stage2_hierarchy"): {
            "relationship": "cross_platform_dependency",
            "general_rule": None,
            "rationale": "scripted",
        },
        (pair_key, "stage3_quality"): {
            "coverage_winner": "target",
            "efficiency_winner": "target",
            "false_positive_winner": "target",
            "notes": "scripted",
        },
        (pair_key, "stage4_recommend"): {
            "action": "keep_superior",
            "keep": keep,
            "retire": retire,
            "merged_draft": None,
            "confidence": 0.9,
            "rationale": "scripted",
        },
    }


def test_out_of_range_score_clamps_with_warning():
    key = ("c-1", "t-1")
    client = MockLlmClient(scripted=_scripted_full(key, score=150))
    with pytest.warns(ScoreClampWarning, match="150"):
        record = analyze_pair(_pair(), client)
    assert record.verdict.score == 100
    assert record.gate_passed

    low = dict(_scripted_full(key, score=-5))
    client = MockLlmClient(scripted=low)
    with pytest.warns(ScoreClampWarning, match="-5"):
        record = analyze_pair(_pair(), client)
    assert record.verdict.score == 0
    assert not record.gate_passed


def test_in_range_score_never_warns():
    client = MockLlmClient(scripted=_scripted_full(("c-1", "t-1"), score=100))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        record = analyze_pair(_pair(), client)
    assert record.verdict.score == 100


def test_fractional_score_rounds_silently():
    scripted = _scripted_full(("c-1", "t-1"), score=88.6)
    client = MockLlmClient(scripted=scripted)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        record = analyze_pair(_pair(), client)
    assert record.verdict.score == 89


def test_consistency_warning_on_contradicted_unanimous_winners():
    # quality says target on all three axes, recommendation keeps candidate
    scripted = _scripted_full(("c-1", "t-1"), score=90, keep="c-1", retire="t-1")
    client = MockLlmClient(scripted=scripted)
    with pytest.warns(ConsistencyWarning, match="unanimously"):
        record = analyze_pair(_pair(), client)
    # advisory only: the recommendation stands
    assert record.recommendation.keep_id == "c-1"


def test_no_consistency_warning_when_recommendation_agrees():
    scripted = _scripted_full(("c-1", "t-1"), score=90)
    client = MockLlmClient(scripted=scripted)
    with warnings.catch_warnings():
        warnings.simplefilter("error", ConsistencyWarning)
        analyze_pair(_pair(), client)


def test_hierarchy_check_rejects_foreign_general_rule():
    scripted = _scripted_full(("c-1", "t-1"), score=90)
    scripted[(("c-1", "t-1"), "stage2_hierarchy")] = {
        "relationship": "generalization",
        "general_rule": "somebody-else",
        "rationale": "scripted",
    }
    with pytest.raises(MalformedResponse, match="stage2_hierarchy"):
        analyze_pair(_pair(), MockLlmClient(scripted=scripted))


def test_recommendation_check_rejects_keep_equals_retire():
    scripted = _scripted_full(("c-1", "t-1"), score=90, keep="t-1", retire="t-1")
    with pytest.raises(MalformedResponse, match="stage4_recommend"):
        analyze_pair(_pair(), MockLlmClient(scripted=scripted))


def test_failure_record_carries_error_and_nothing_else():
    record = failure_record(_pair(), "backend exploded", clock=frozen_clock)
    assert record.error == "backend exploded"
    assert record.verdict is None
    assert not record.gate_passed
    assert record.raw_exchanges == ()


def test_record_invariants_enforced():
    base = dict(
        id="ar-x", target_id="a", candidate_id="b", retrieval_score=0.5,
        gate_threshold=75, prompt_mode=PromptMode.CHAIN_OF_THOUGHT,
        model_id="mock", created_at="2024-01-01T00:00:00+00:00",
    )
    with pytest.raises(ValueError, match="later stage"):
        AnalysisRecord(gate_passed=True, verdict=_verdict(), **base)
    with pytest.raises(ValueError, match="later stage"):
        AnalysisRecord(
            gate_passed=False, verdict=_verdict(score=10), hierarchy=_HIERARCHY, **base
        )
    with pytest.raises(ValueError, match="cannot carry a verdict"):
        AnalysisRecord(gate_passed=False, verdict=_verdict(), error="boom", **base)
    with pytest.raises(ValueError, match="must record 4 exchanges"):
        AnalysisRecord(
            gate_passed=True, verdict=_verdict(), hierarchy=_HIERARCHY,
            quality=_quality(), recommendation=_KEEP_BOTH, raw_exchanges=(), **base
        )


def test_verdict_and_recommendation_validation():
    with pytest.raises(ValueError):
        SemanticVerdict(score=101, overlap=True, rationale="r")
    with pytest.raises(ValueError):
        HierarchyRelation(
            relationship=Relationship.GENERALIZATION, general_rule_id=None, rationale="r"
        )
    with pytest.raises(ValueError):
        Recommendation(
            action=RecommendedAction.KEEP_SUPERIOR, keep_id="a", retire_id="a",
            merged_draft=None, confidence=0.5, rationale="r",
        )
    with pytest.raises(ValueError):
        Recommendation(
            action=RecommendedAction.MERGE, keep_id=None, retire_id=None,
            merged_draft=None, confidence=0.5, rationale="r",
        )
    with pytest.raises(ValueError):
        Recommendation(
            action=RecommendedAction.KEEP_BOTH, keep_id=None, retire_id=None,
            merged_draft=None, confidence=1.5, rationale="r",
        )


def test_record_round_trips_through_dict():
    for pair in (_pair("a b c d", "a b c"), _pair("a b", "x y")):
        record = analyze_pair(pair, MockLlmClient(), clock=frozen_clock)
        assert record_from_dict(record_to_dict(record)) == record

    failed = failure_record(_pair(), "boom", clock=frozen_clock)
    assert record_from_dict(record_to_dict(failed)) == failed


def test_record_to_dict_can_drop_exchanges():
    record = analyze_pair(_pair("a b", "x y"), MockLlmClient())
    slim = record_to_dict(record, include_exchanges=False)
    assert "raw_exchanges" not in slim
    assert slim["verdict"]["score"] == 0
