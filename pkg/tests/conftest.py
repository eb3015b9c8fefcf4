from __future__ import annotations

from datetime import datetime, timezone
from pathlib import Path

import pytest

from rulegenie.embedding import builtin_deterministic_embedder, embed_set
from rulegenie.model import DetectionRule, RuleFormat, RuleOrigin
from rulegenie.synthetic import generate

FIXTURES = Path(__file__).parent / "fixtures"

FROZEN_MOMENT = datetime(2024, 1, 1, tzinfo=timezone.utc)


def frozen_clock():
    return FROZEN_MOMENT


def make_rule(
    rule_id: str,
    text: str,
    platform: str = "windows",
    fmt: RuleFormat = RuleFormat.SPLUNK,
    origin: RuleOrigin = RuleOrigin.EXISTING,
) -> DetectionRule:
    return DetectionRule(
        id=rule_id,
        format=fmt,
        title=f"rule {rule_id}",
        description="",
        raw_text=text,
        canonical_text=text,
        platform=platform,
        origin=origin,
    )


@pytest.fixture(scope="session")
def corpus():
    """The default 300-rule corpus with 40 planted pairs, built once."""
    rule_set, truth_rows = generate()
    return rule_set, truth_rows


@pytest.fixture(scope="session")
def corpus_embeddings(corpus):
    rule_set, _ = corpus
    embeddings, failures = embed_set(rule_set, builtin_deterministic_embedder())
    assert not failures
    return embeddings
