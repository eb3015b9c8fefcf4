from __future__ import annotations

import re

import pytest

from rulegenie.model import RuleOrigin
from rulegenie.parsers import ingest, load_manifest
from rulegenie.synthetic import (
    DEFAULT_PLANTS,
    DEFAULT_RULES,
    DEFAULT_SEED,
    generate,
    write_corpus,
)

_WORD_RE = re.compile(r"\w+")


def _jaccard(a: str, b: str) -> int:
    ta, tb = set(_WORD_RE.findall(a)), set(_WORD_RE.findall(b))
    union = ta | tb
    return round(100 * len(ta & tb) / len(union)) if union else 100


def test_same_seed_same_corpus(corpus):
    rule_set, truth = corpus
    again_set, again_truth = generate()
    assert truth == again_truth
    rules = {r.id: r for r in rule_set.active_rules()}
    again = {r.id: r for r in again_set.active_rules()}
    assert set(rules) == set(again)
    for rid in rules:
        assert rules[rid].canonical_text == again[rid].canonical_text
        assert rules[rid].raw_text == again[rid].raw_text


def test_different_seed_different_corpus(corpus):
    rule_set, _ = corpus
    other_set, _ = generate(seed=1)
    ours = {r.canonical_text for r in rule_set.active_rules()}
    theirs = {r.canonical_text for r in other_set.active_rules()}
    assert ours != theirs


def test_corpus_shape(corpus):
    rule_set, truth = corpus
    rules = rule_set.active_rules()
    assert len(rules) == DEFAULT_RULES
    assert len(truth) == DEFAULT_PLANTS
    formats = {r.format.value for r in rules}
    assert formats == {"sigma", "splunk", "aql"}
    # every truth row names a base and its variant
    ids = {r.id for r in rules}
    for row in truth:
        assert row.pair_id_a in ids
        assert row.pair_id_b in ids
        assert row.pair_id_b == row.pair_id_a + "v"
        assert row.expected_action in {"keep_superior", "keep_both"}


def test_marker_tokens_are_corpus_unique(corpus):
    rule_set, truth = corpus
    variant_ids = {row.pair_id_b for row in truth}
    owners: dict[str, set[str]] = {}
    for rule in rule_set.active_rules():
        for token in _WORD_RE.findall(rule.canonical_text):
            if re.fullmatch(r"(case|zone|mark)\d{4}", token):
                owners.setdefault(token, set()).add(rule.id)
    assert owners
    for token, holders in owners.items():
        # a marker appears in its base rule and, for plants, the variant
        bases = {h.removesuffix("v") for h in holders}
        assert len(bases) == 1, f"marker {token} leaked across rules: {holders}"
        assert holders - variant_ids == bases


def test_incidental_and_planted_similarity_margins(corpus):
    """The mock's own Jaccard metric separates plants from coincidences."""
    rule_set, truth = corpus
    rules = sorted(rule_set.active_rules(), key=lambda r: r.id)
    planted = {tuple(sorted((row.pair_id_a, row.pair_id_b))) for row in truth}
    max_incidental = 0
    min_planted = 100
    for i, a in enumerate(rules):
        for b in rules[i + 1:]:
            score = _jaccard(a.canonical_text, b.canonical_text)
            if (a.id, b.id) in planted:
                min_planted = min(min_planted, score)
            else:
                max_incidental = max(max_incidental, score)
    assert max_incidental < 75, f"incidental pair reaches the gate: {max_incidental}"
    assert min_planted >= 75, f"planted pair misses the gate: {min_planted}"
    # headroom on both sides of the gate keeps the corpus robust
    assert min_planted - max_incidental >= 10


def test_superset_plants_strictly_contain_their_base(corpus):
    rule_set, truth = corpus
    rules = {r.id: r for r in rule_set.active_rules()}
    supersets = [row for row in truth if row.expected_action == "keep_superior"]
    assert supersets
    for row in supersets:
        base = set(_WORD_RE.findall(rules[row.pair_id_a].canonical_text))
        variant = set(_WORD_RE.findall(rules[row.pair_id_b].canonical_text))
        assert variant > base


def test_keep_both_plants_offer_no_superset(corpus):
    rule_set, truth = corpus
    rules = {r.id: r for r in rule_set.active_rules()}
    for row in truth:
        if row.expected_action != "keep_both":
            continue
        base = set(_WORD_RE.findall(rules[row.pair_id_a].canonical_text))
        variant = set(_WORD_RE.findall(rules[row.pair_id_b].canonical_text))
        assert not (base < variant or variant < base)


def test_variant_origin_is_configurable():
    rule_set, truth = generate(n_rules=20, n_plants=4, variant_origin=RuleOrigin.NEW)
    variants = {row.pair_id_b for row in truth}
    for rule in rule_set.active_rules():
        expected = RuleOrigin.NEW if rule.id in variants else RuleOrigin.EXISTING
        assert rule.origin is expected


def test_plant_count_bounded_by_corpus_size():
    with pytest.raises(ValueError, match="too small"):
        generate(n_rules=10, n_plants=6)


def test_write_corpus_round_trips_through_ingest(tmp_path, corpus):
    manifest_path, truth_path = write_corpus(tmp_path, n_rules=60, n_plants=8)
    assert manifest_path == tmp_path / "manifest.json"
    rule_set, diagnostics = ingest(load_manifest(manifest_path))
    assert diagnostics == []
    in_memory, truth = generate(n_rules=60, n_plants=8)
    on_disk = {r.id: r for r in rule_set.active_rules()}
    expected = {r.id: r for r in in_memory.active_rules()}
    assert set(on_disk) == set(expected)
    for rid, rule in on_disk.items():
        assert rule.canonical_text == expected[rid].canonical_text
        assert rule.format is expected[rid].format

    header, *rows = truth_path.read_text(encoding="utf-8").splitlines()
    assert header == "pair_id_a,pair_id_b,expected_action"
    assert len(rows) == 8
    assert rows == [f"{t.pair_id_a},{t.pair_id_b},{t.expected_action}" for t in truth]


def test_write_corpus_is_byte_stable(tmp_path):
    write_corpus(tmp_path / "a", seed=DEFAULT_SEED, n_rules=30, n_plants=4)
    write_corpus(tmp_path / "b", seed=DEFAULT_SEED, n_rules=30, n_plants=4)
    files_a = sorted((tmp_path / "a").rglob("*"))
    files_b = sorted((tmp_path / "b").rglob("*"))
    assert [f.name for f in files_a] == [f.name for f in files_b]
    for fa, fb in zip(files_a, files_b):
        if fa.is_file():
            assert fa.read_bytes() == fb.read_bytes(), fa.name
