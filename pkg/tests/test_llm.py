from __future__ import annotations

import json

import pytest
import requests

from rulegenie.llm import (
    HttpChatClient,
    LlmUnavailable,
    MockLlmClient,
    _extract_pair,
    stage_key,
)

_STAGE1 = {"$id": "https://rulegenie.dev/schemas/stage1-semantic"}
_STAGE2 = {"$id": "https://rulegenie.dev/schemas/stage2-hierarchy"}
_STAGE4 = {"$id": "https://rulegenie.dev/schemas/stage4-recommend"}


def _prompt(target_text, candidate_text, target_id="t-1", candidate_id="c-1",
            target_platform="windows", candidate_platform="windows"):
    content = (
        f"TARGET RULE [id={target_id} platform={target_platform}]:\n"
        f"<<<RULE\n{target_text}\nRULE>>>\n\n"
        f"CANDIDATE RULE [id={candidate_id} platform={candidate_platform}]:\n"
        f"<<<RULE\n{candidate_text}\nRULE>>>"
    )
    return [{"role": "user", "content": content}]


def test_stage_key_from_schema_id():
    assert stage_key(_STAGE1) == "stage1_semantic"
    assert stage_key({"$id": "single-prompt"}) == "single_prompt"
    assert stage_key({}) == "unknown"


def test_extract_pair_reads_both_fences():
    pair = _extract_pair(_prompt("index=a", "index=b", candidate_platform="linux"))
    assert pair["target"] == {"id": "t-1", "platform": "windows", "text": "index=a"}
    assert pair["candidate"]["platform"] == "linux"


def test_extract_pair_handles_multiline_text():
    pair = _extract_pair(_prompt("line one\nline two", "other"))
    assert pair["target"]["text"] == "line one\nline two"


def test_extract_pair_requires_both_roles():
    messages = [{"role": "user", "content": "TARGET RULE [id=a platform=x]:\n<<<RULE\nt\nRULE>>>"}]
    with pytest.raises(ValueError):
        _extract_pair(messages)


def test_heuristic_score_is_jaccard():
    client = MockLlmClient()
    # 3 shared tokens of 4 in the union: round(75)
    reply = json.loads(client.complete(_prompt("a b c", "a b c d"), _STAGE1))
    assert reply["score"] == 75
    assert reply["overlap"] is True

    reply = json.loads(client.complete(_prompt("a b", "c d"), _STAGE1))
    assert reply["score"] == 0
    assert reply["overlap"] is False


def test_heuristic_gate_threshold_configurable():
    strict = MockLlmClient(gate_threshold=80)
    reply = json.loads(strict.complete(_prompt("a b c", "a b c d"), _STAGE1))
    assert reply["score"] == 75
    assert reply["overlap"] is False


def test_heuristic_hierarchy_superset_and_platform():
    client = MockLlmClient()
    reply = json.loads(client.complete(_prompt("a b c d", "a b c"), _STAGE2))
    assert reply["relationship"] == "generalization"
    assert reply["general_rule"] == "t-1"

    reply = json.loads(
        client.complete(_prompt("a b", "c d", candidate_platform="linux"), _STAGE2)
    )
    assert reply["relationship"] == "platform_specific_independence"

    reply = json.loads(client.complete(_prompt("a b", "b c"), _STAGE2))
    assert reply["relationship"] == "cross_platform_dependency"


def test_heuristic_recommendation_prefers_coverage_winner():
    client = MockLlmClient()
    reply = json.loads(client.complete(_prompt("a b c d", "a b c"), _STAGE4))
    assert reply["action"] == "keep_superior"
    assert reply["keep"] == "t-1"
    assert reply["retire"] == "c-1"
    assert 0.0 <= reply["confidence"] <= 1.0


def test_heuristic_recommendation_keep_both_on_full_tie():
    client = MockLlmClient()
    # same token set, same length, nothing separates them
    reply = json.loads(client.complete(_prompt("a b c", "c b a"), _STAGE4))
    assert reply["action"] == "keep_both"
    assert reply["keep"] is None and reply["retire"] is None


def test_scripted_mode_replays_by_sorted_pair_and_stage():
    canned = {
        (("c-1", "t-1"), "stage1_semantic"): {"score": 91, "overlap": True, "rationale": "x"},
        (("c-1", "t-1"), "stage2_hierarchy"): '{"relationship": "generalization"}',
    }
    client = MockLlmClient(scripted=canned)
    assert json.loads(client.complete(_prompt("p", "q"), _STAGE1))["score"] == 91
    # string scripts pass through untouched
    assert client.complete(_prompt("p", "q"), _STAGE2) == '{"relationship": "generalization"}'
    with pytest.raises(KeyError):
        client.complete(_prompt("p", "q", target_id="other"), _STAGE1)


def test_garble_consumes_then_recovers():
    client = MockLlmClient(garble={"stage1_semantic": 2})
    first = client.complete(_prompt("a", "a"), _STAGE1)
    second = client.complete(_prompt("a", "a"), _STAGE1)
    third = client.complete(_prompt("a", "a"), _STAGE1)
    with pytest.raises(json.JSONDecodeError):
        json.loads(first)
    with pytest.raises(json.JSONDecodeError):
        json.loads(second)
    assert json.loads(third)["score"] == 100


def test_counters_track_stage_and_total():
    client = MockLlmClient()
    client.complete(_prompt("a", "a"), _STAGE1)
    client.complete(_prompt("a", "a"), _STAGE1)
    client.complete(_prompt("a b c d", "a"), _STAGE2)
    assert client.calls_by_stage["stage1_semantic"] == 2
    assert client.calls_by_stage["stage2_hierarchy"] == 1
    assert client.calls_total == 3
    client.reset_counters()
    assert client.calls_total == 0


class _Response:
    def __init__(self, payload=None, error=None):
        self._payload = payload
        self._error = error

    def raise_for_status(self):
        if self._error:
            raise requests.HTTPError(self._error)

    def json(self):
        return self._payload


def test_http_client_payload_and_auth(monkeypatch):
    seen = {}

    def fake_post(url, json=None, headers=None, timeout=None):
        seen.update(url=url, payload=json, headers=headers, timeout=timeout)
        return _Response({"choices": [{"message": {"content": '{"ok": 1}'}}]})

    monkeypatch.setattr(requests, "post", fake_post)
    client = HttpChatClient("http://llm.local/", model="m-1", api_key="sekrit", timeout_s=7)
    out = client.complete(_prompt("a", "b"), _STAGE1)
    assert out == '{"ok": 1}'
    assert seen["url"] == "http://llm.local/v1/chat/completions"
    assert seen["payload"]["model"] == "m-1"
    assert seen["payload"]["temperature"] == 0
    assert seen["headers"]["Authorization"] == "Bearer sekrit"
    assert seen["timeout"] == 7
    assert client.calls_by_stage["stage1_semantic"] == 1


def test_http_client_key_from_environment(monkeypatch):
    monkeypatch.setenv("RULEGENIE_LLM_KEY", "env-key")
    seen = {}

    def fake_post(url, json=None, headers=None, timeout=None):
        seen.update(headers=headers)
        return _Response({"choices": [{"message": {"content": "x"}}]})

    monkeypatch.setattr(requests, "post", fake_post)
    HttpChatClient("http://llm.local", model="m").complete(_prompt("a", "b"), _STAGE1)
    assert seen["headers"]["Authorization"] == "Bearer env-key"

    # no key at all: header omitted entirely
    monkeypatch.delenv("RULEGENIE_LLM_KEY")
    HttpChatClient("http://llm.local", model="m").complete(_prompt("a", "b"), _STAGE1)
    assert "Authorization" not in seen["headers"]


def test_http_client_retries_with_backoff_then_fails(monkeypatch):
    attempts = []

    def fake_post(url, json=None, headers=None, timeout=None):
        attempts.append(url)
        return _Response(error="503 busy")

    monkeypatch.setattr(requests, "post", fake_post)
    naps: list[float] = []
    client = HttpChatClient(
        "http://llm.local", model="m", retry_attempts=3, retry_backoff_s=0.5, sleep=naps.append
    )
    with pytest.raises(LlmUnavailable):
        client.complete(_prompt("a", "b"), _STAGE1)
    assert len(attempts) == 3
    assert naps == [0.5, 1.0]


def test_http_client_recovers_mid_retry(monkeypatch):
    responses = [
        _Response(error="500"),
        _Response({"choices": [{"message": {"content": "late"}}]}),
    ]

    monkeypatch.setattr(requests, "post", lambda *a, **k: responses.pop(0))
    client = HttpChatClient("http://llm.local", model="m", sleep=lambda _: None)
    assert client.complete(_prompt("a", "b"), _STAGE1) == "late"


def test_http_client_malformed_body_counts_as_failure(monkeypatch):
    monkeypatch.setattr(requests, "post", lambda *a, **k: _Response({"choices": []}))
    client = HttpChatClient("http://llm.local", model="m", retry_attempts=2, sleep=lambda _: None)
    with pytest.raises(LlmUnavailable):
        client.complete(_prompt("a", "b"), _STAGE1)
