"""LLM client layer: HTTP chat client plus deterministic mocks.

Every client exposes the same ``complete(messages, response_schema)``
surface and counts calls per analysis stage, keyed by the schema ``$id``.
Mocks are first-class: the heuristic mock derives verdicts from the rule
texts embedded in the prompt, the scripted mock replays canned responses,
and both keep the whole pipeline runnable offline.
"""

from __future__ import annotations

import json
import os
import re
import threading
from collections import Counter

import requests

from rulegenie.model import RuleGenieError


class LlmUnavailable(RuleGenieError):
    pass


def stage_key(response_schema: dict) -> str:
    """Counter key for a response schema, e.g. 'stage1_semantic'."""
    schema_id = str(response_schema.get("$id", "unknown"))
    return schema_id.rsplit("/", 1)[-1].replace("-", "_")


class LlmClient:
    """Base client; subclasses implement _complete."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.calls_by_stage: Counter[str] = Counter()

    @property
    def calls_total(self) -> int:
        with self._lock:
            return sum(self.calls_by_stage.values())

    def reset_counters(self) -> None:
        with self._lock:
            self.calls_by_stage.clear()

    def complete(self, messages: list[dict], response_schema: dict) -> str:
        with self._lock:
            self.calls_by_stage[stage_key(response_schema)] += 1
        return self._complete(messages, response_schema)

    def _complete(self, messages: list[dict], response_schema: dict) -> str:
        raise NotImplementedError


class HttpChatClient(LlmClient):
    """Chat-completions client over HTTP.

    Requests are sent with temperature 0. The API key comes from the
    constructor or the RULEGENIE_LLM_KEY environment variable.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        timeout_s: float = 60.0,
        retry_attempts: int = 3,
        retry_backoff_s: float = 0.5,
        sleep=None,
    ) -> None:
        super().__init__()
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get("RULEGENIE_LLM_KEY", "")
        self.timeout_s = timeout_s
        self.retry_attempts = retry_attempts
        self.retry_backoff_s = retry_backoff_s
        import time

        self._sleep = sleep if sleep is not None else time.sleep

    def _complete(self, messages: list[dict], response_schema: dict) -> str:
        payload = {"model": self.model, "messages": messages, "temperature": 0}
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        url = f"{self.base_url}/v1/chat/completions"
        last_error: Exception | None = None
        for attempt in range(self.retry_attempts):
            try:
                response = requests.post(
                    url, json=payload, headers=headers, timeout=self.timeout_s
                )
                response.raise_for_status()
                return response.json()["choices"][0]["message"]["content"]
            except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
                last_error = exc
                if attempt + 1 < self.retry_attempts:
                    self._sleep(self.retry_backoff_s * (2**attempt))
        raise LlmUnavailable(f"chat completion failed after {self.retry_attempts} attempts: {last_error}")


_FENCE_RE = re.compile(
    r"(TARGET|CANDIDATE) RULE \[id=(?P<id>[^ \]]*) platform=(?P<platform>[^\]]*)\]:\n"
    r"<<<RULE\n(?P<text>.*?)\nRULE>>>",
    re.DOTALL,
)

_WORD_RE = re.compile(r"\w+")


def _extract_pair(messages: list[dict]) -> dict[str, dict]:
    """Pull target/candidate id, platform, and text out of prompt fences."""
    content = "\n".join(m.get("content", "") for m in messages)
    found: dict[str, dict] = {}
    for match in _FENCE_RE.finditer(content):
        role = match.group(1).lower()
        found[role] = {
            "id": match.group("id"),
            "platform": match.group("platform"),
            "text": match.group("text"),
        }
    if "target" not in found or "candidate" not in found:
        raise ValueError("prompt does not contain both rule fences")
    return found


class MockLlmClient(LlmClient):
    """Deterministic stand-in for a chat model.

    Heuristic mode (default) scores pairs by token-set Jaccard similarity
    of the fenced rule texts and derives every later stage from token-set
    relations, so outcomes are a pure function of the two rules. Scripted
    mode replays canned responses keyed by (sorted id pair, stage).

    ``garble`` maps a stage key to a number of initial calls that return
    non-JSON garbage, for exercising repair retries.
    """

    def __init__(
        self,
        gate_threshold: int = 75,
        scripted: dict[tuple[tuple[str, str], str], str | dict] | None = None,
        garble: dict[str, int] | None = None,
    ) -> None:
        super().__init__()
        self.gate_threshold = gate_threshold
        self.scripted = scripted
        self._garble = Counter(garble or {})

    def _complete(self, messages: list[dict], response_schema: dict) -> str:
        stage = stage_key(response_schema)
        with self._lock:
            if self._garble[stage] > 0:
                self._garble[stage] -= 1
                return "I could not reach a structured verdict for this pair."
        pair = _extract_pair(messages)
        if self.scripted is not None:
            key = (tuple(sorted((pair["target"]["id"], pair["candidate"]["id"]))), stage)
            canned = self.scripted[key]
            return canned if isinstance(canned, str) else json.dumps(canned)
        return json.dumps(self._heuristic(stage, pair))

    def _heuristic(self, stage: str, pair: dict[str, dict]) -> dict:
        target, candidate = pair["target"], pair["candidate"]
        if stage == "stage1_semantic":
            return self._semantic(target, candidate)
        if stage == "stage2_hierarchy":
            return self._hierarchy(target, candidate)
        if stage == "stage3_quality":
            return self._quality(target, candidate)
        if stage == "stage4_recommend":
            return self._recommend(target, candidate)
        if stage == "single_prompt":
            return {
                "semantic": self._semantic(target, candidate),
                "hierarchy": self._hierarchy(target, candidate),
                "quality": self._quality(target, candidate),
                "recommendation": self._recommend(target, candidate),
            }
        raise ValueError(f"unrecognized response schema stage: {stage}")

    @staticmethod
    def _tokens(text: str) -> list[str]:
        return _WORD_RE.findall(text)

    def _score(self, target: dict, candidate: dict) -> int:
        a = set(self._tokens(target["text"]))
        b = set(self._tokens(candidate["text"]))
        if not a and not b:
            return 100
        union = len(a | b)
        return round(100 * len(a & b) / union) if union else 0

    def _semantic(self, target: dict, candidate: dict) -> dict:
        score = self._score(target, candidate)
        return {
            "score": score,
            "overlap": score >= self.gate_threshold,
            "rationale": f"token-set Jaccard similarity scored {score} of 100",
        }

    def _superset_side(self, target: dict, candidate: dict) -> str | None:
        a = set(self._tokens(target["text"]))
        b = set(self._tokens(candidate["text"]))
        if a > b:
            return "target"
        if b > a:
            return "candidate"
        return None

    def _hierarchy(self, target: dict, candidate: dict) -> dict:
        side = self._superset_side(target, candidate)
        if side is not None:
            general = target if side == "target" else candidate
            return {
                "relationship": "generalization",
                "general_rule": general["id"],
                "rationale": f"{side} rule's tokens strictly contain the other rule's tokens",
            }
        if target["platform"] != candidate["platform"]:
            return {
                "relationship": "platform_specific_independence",
                "general_rule": None,
                "rationale": "rules address different platforms",
            }
        return {
            "relationship": "cross_platform_dependency",
            "general_rule": None,
            "rationale": "rules share logic without one containing the other",
        }

    def _quality(self, target: dict, candidate: dict) -> dict:
        coverage = self._superset_side(target, candidate) or "tie"
        ta, tb = self._tokens(target["text"]), self._tokens(candidate["text"])
        if len(ta) < len(tb):
            efficiency = "target"
        elif len(tb) < len(ta):
            efficiency = "candidate"
        else:
            efficiency = "tie"
        sa, sb = len(set(ta)), len(set(tb))
        if sa > sb:
            false_positive = "target"
        elif sb > sa:
            false_positive = "candidate"
        else:
            false_positive = "tie"
        return {
            "coverage_winner": coverage,
            "efficiency_winner": efficiency,
            "false_positive_winner": false_positive,
            "notes": "winners derived from token counts and containment",
        }

    def _recommend(self, target: dict, candidate: dict) -> dict:
        quality = self._quality(target, candidate)
        score = self._score(target, candidate)
        for axis in ("coverage_winner", "false_positive_winner", "efficiency_winner"):
            winner = quality[axis]
            if winner != "tie":
                keep = target if winner == "target" else candidate
                retire = candidate if winner == "target" else target
                return {
                    "action": "keep_superior",
                    "keep": keep["id"],
                    "retire": retire["id"],
                    "merged_draft": None,
                    "confidence": score / 100,
                    "rationale": f"{winner} rule wins on {axis.rsplit('_', 1)[0]}",
                }
        return {
            "action": "keep_both",
            "keep": None,
            "retire": None,
            "merged_draft": None,
            "confidence": score / 100,
            "rationale": "no quality axis separates the rules",
        }
