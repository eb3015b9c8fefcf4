"""Evaluation against planted ground truth, parameter sweeps, projection.

Recall asks: of the known-redundant pairs, how many survived retrieval and
the semantic gate. Precision asks: of everything the gate let through, how
much was actually redundant with the expected action. Both treat pairs as
unordered. Undefined metrics are reported as None, never as zero.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rulegenie.embedding import EmbedderBackend, RuleEmbedding
from rulegenie.model import RuleGenieError, RuleSet
from rulegenie.orchestrator import AnalysisRecord
from rulegenie.pipeline import PipelineConfig, run_retrospective


class EmptyGroundTruth(RuleGenieError):
    pass


class NoRecommendations(RuleGenieError):
    pass


class InsufficientData(RuleGenieError):
    pass


@dataclass(frozen=True)
class GroundTruth:
    """Unordered truth pairs; expected_action may be empty (retrieval-only)."""

    expected: dict[tuple[str, str], str]

    def __post_init__(self) -> None:
        if not self.expected:
            raise EmptyGroundTruth("ground truth contains no pairs")

    def __len__(self) -> int:
        return len(self.expected)

    @classmethod
    def from_rows(cls, rows) -> "GroundTruth":
        expected = {}
        for row in rows:
            key = tuple(sorted((row[0], row[1])))
            expected[key] = row[2] if len(row) > 2 else ""
        return cls(expected=expected)


def load_ground_truth(path: str | Path) -> GroundTruth:
    """Read a pair_id_a,pair_id_b,expected_action CSV."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"pair_id_a", "pair_id_b", "expected_action"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ValueError(f"{path}: ground truth needs columns {sorted(required)}")
        rows = [
            (row["pair_id_a"], row["pair_id_b"], (row["expected_action"] or "").strip())
            for row in reader
        ]
    return GroundTruth.from_rows(rows)


@dataclass
class MetricsReport:
    true_positives: int
    false_negatives: int
    correct_recommendations: int
    incorrect_recommendations: int
    recall: float | None
    precision: float | None
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "true_positives": self.true_positives,
            "false_negatives": self.false_negatives,
            "correct_recommendations": self.correct_recommendations,
            "incorrect_recommendations": self.incorrect_recommendations,
            "recall": self.recall if self.recall is not None else "n/a",
            "precision": self.precision if self.precision is not None else "n/a",
            "config": dict(self.config),
        }


def _gated(records: list[AnalysisRecord]) -> dict[tuple[str, str], AnalysisRecord]:
    return {r.pair_key: r for r in records if r.gate_passed}


def _is_correct(record: AnalysisRecord, truth: GroundTruth) -> bool:
    """A flagged pair is correct iff it is planted truth and, when the truth
    row names an expected action, the recommendation matches it."""
    expected = truth.expected.get(record.pair_key)
    if expected is None:
        return False
    if expected == "":
        return True
    return (
        record.recommendation is not None
        and record.recommendation.action.value == expected
    )


def compute_recall(
    records: list[AnalysisRecord], truth: GroundTruth
) -> tuple[int, int, float]:
    """(true positives, false negatives, recall) over the truth pairs."""
    gated = _gated(records)
    tp = sum(1 for key in truth.expected if key in gated)
    fn = len(truth) - tp
    return tp, fn, tp / len(truth)


def compute_precision(
    records: list[AnalysisRecord], truth: GroundTruth
) -> tuple[int, int, float]:
    """(correct, incorrect, precision) over every gate-passed record.

    A gate-passed pair outside the truth set is incorrect by definition; one
    inside it is correct when the expected action is blank or matches.
    """
    gated = _gated(records)
    if not gated:
        raise NoRecommendations("batch contains no gate-passed records")
    correct = sum(1 for record in gated.values() if _is_correct(record, truth))
    incorrect = len(gated) - correct
    return correct, incorrect, correct / len(gated)


def evaluate(
    records: list[AnalysisRecord],
    truth: GroundTruth,
    config: PipelineConfig | None = None,
) -> MetricsReport:
    tp, fn, recall = compute_recall(records, truth)
    correct, incorrect, precision = compute_precision(records, truth)
    echo = {}
    if config is not None:
        echo = {
            "k": config.k,
            "threshold": config.threshold,
            "prompt_mode": config.prompt_mode.value,
            "model_id": config.model_id,
        }
    return MetricsReport(
        true_positives=tp,
        false_negatives=fn,
        correct_recommendations=correct,
        incorrect_recommendations=incorrect,
        recall=recall,
        precision=precision,
        config=echo,
    )


def summarize(records: list[AnalysisRecord]) -> dict:
    """Funnel and action breakdown for a batch, for the report command."""
    actions: dict[str, int] = {}
    scores = []
    for record in records:
        if record.recommendation is not None:
            action = record.recommendation.action.value
            actions[action] = actions.get(action, 0) + 1
        if record.verdict is not None:
            scores.append(record.verdict.score)
    return {
        "records": len(records),
        "gate_passed": sum(r.gate_passed for r in records),
        "failures": sum(r.error is not None for r in records),
        "actions": dict(sorted(actions.items())),
        "mean_semantic_score": round(sum(scores) / len(scores), 2) if scores else "n/a",
    }


def sweep_k(
    rule_set: RuleSet,
    backend: EmbedderBackend,
    client_factory,
    ks: list[int],
    truth: GroundTruth,
    config: PipelineConfig | None = None,
    clock=None,
    embeddings: dict[str, RuleEmbedding] | None = None,
) -> list[dict]:
    """Run the full pipeline once per k; fresh client each run."""
    if not ks or any(k < 1 for k in ks):
        raise ValueError("ks must be a non-empty list of positive integers")
    config = config or PipelineConfig()
    rows = []
    for k in sorted(set(ks)):
        client = client_factory()
        result = run_retrospective(
            rule_set, backend, client,
            config=config.replace(k=k), clock=clock, embeddings=embeddings,
        )
        try:
            report = evaluate(result.records, truth, config.replace(k=k))
        except NoRecommendations:
            report = MetricsReport(0, len(truth), 0, 0, recall=0.0, precision=None)
        rows.append(
            {
                "k": k,
                "precision": report.precision,
                "recall": report.recall,
                "pairs_analyzed": len(result.records),
                "llm_calls": client.calls_total,
                "flagged_pairs": sorted(
                    r.pair_key for r in result.records if r.gate_passed
                ),
            }
        )
    return rows


def regate_metrics(
    records: list[AnalysisRecord], truth: GroundTruth, threshold: int
) -> dict:
    """Metrics as if the gate had been set at ``threshold``.

    Records must come from a run at a threshold no higher than this one;
    raising the bar only shrinks the gate-passed set, so every pair passing
    here already carries its full analysis.
    """
    passing = [
        r
        for r in records
        if r.verdict is not None and r.verdict.overlap and r.verdict.score >= threshold
    ]
    found = sum(1 for key in truth.expected if key in {r.pair_key for r in passing})
    correct = sum(1 for record in passing if _is_correct(record, truth))
    incorrect = len(passing) - correct
    return {
        "threshold": threshold,
        "precision": correct / len(passing) if passing else None,
        "recall": found / len(truth),
        "gate_passed": len(passing),
    }


def sweep_threshold(
    rule_set: RuleSet,
    backend: EmbedderBackend,
    client_factory,
    thresholds: list[int],
    truth: GroundTruth,
    config: PipelineConfig | None = None,
    clock=None,
    embeddings: dict[str, RuleEmbedding] | None = None,
) -> list[dict]:
    """One pipeline run at the lowest threshold, re-gated for the rest."""
    if not thresholds or any(not 0 <= t <= 100 for t in thresholds):
        raise ValueError("thresholds must be a non-empty list within [0, 100]")
    config = config or PipelineConfig()
    floor = min(thresholds)
    client = client_factory(floor)
    result = run_retrospective(
        rule_set, backend, client,
        config=config.replace(threshold=floor), clock=clock, embeddings=embeddings,
    )
    return [regate_metrics(result.records, truth, t) for t in sorted(set(thresholds))]


def write_sweep_csv(rows: list[dict], path: str | Path, key: str) -> None:
    """CSV table of (key, precision, recall); undefined cells stay blank."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([key, "precision", "recall"])
        for row in rows:
            precision = row["precision"]
            writer.writerow(
                [
                    row[key],
                    "" if precision is None else f"{precision:.6f}",
                    f"{row['recall']:.6f}",
                ]
            )


@dataclass
class ProjectionResult:
    coords: dict[str, tuple[float, float]]
    captured_variance: float
    singular_values: tuple[float, ...]


def export_projection(
    embeddings: dict[str, RuleEmbedding],
    target: str | None = None,
    path: str | Path | None = None,
    n_components: int = 2,
) -> ProjectionResult:
    """Project embeddings to n_components via centered SVD.

    Component signs are fixed so the largest-magnitude loading is positive,
    making the output reproducible across runs. Overflow embeddings are
    excluded; duplicate vectors land on identical coordinates. ``target``
    marks one rule in the CSV so plots can highlight it against the cloud.
    """
    if n_components != 2:
        raise ValueError("only 2-D projection export is supported")
    usable = sorted(
        (rule_id, emb) for rule_id, emb in embeddings.items() if not emb.overflow
    )
    if len(usable) <= n_components:
        raise InsufficientData(
            f"projection needs more than {n_components} non-overflow embeddings, "
            f"got {len(usable)}"
        )
    ids = [rule_id for rule_id, _ in usable]
    if target is not None and target not in set(ids):
        raise ValueError(f"target rule {target!r} has no usable embedding")
    matrix = np.stack([emb.vector for _, emb in usable]).astype(np.float64)
    centered = matrix - matrix.mean(axis=0)
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:n_components].copy()
    for i in range(n_components):
        pivot = np.argmax(np.abs(components[i]))
        if components[i, pivot] < 0:
            components[i] = -components[i]
    coords_matrix = centered @ components.T
    total = float(np.sum(singular**2))
    # a degenerate cloud (all points identical) trivially captures everything
    captured = float(np.sum(singular[:n_components] ** 2) / total) if total > 0 else 1.0
    coords = {
        rule_id: (float(coords_matrix[i, 0]), float(coords_matrix[i, 1]))
        for i, rule_id in enumerate(ids)
    }
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["rule_id", "x", "y", "is_target"])
            for rule_id in ids:
                x, y = coords[rule_id]
                writer.writerow(
                    [
                        rule_id,
                        f"{x:.10f}",
                        f"{y:.10f}",
                        "true" if rule_id == target else "false",
                    ]
                )
    return ProjectionResult(
        coords=coords,
        captured_variance=captured,
        singular_values=tuple(float(s) for s in singular[:n_components]),
    )
