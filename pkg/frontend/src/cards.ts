// View model for the pending-recommendation queue. Keeps the render layer
// dumb: everything it needs is precomputed here from one API payload.

import type { ActionKind, RecommendationSummary, RuleSummary } from "./types.js";

export interface RulePane {
  id: string;
  title: string;
  format: string;
  platform: string;
  canonicalText: string;
}

export interface RecommendationCard {
  analysisId: string;
  target: RulePane;
  candidate: RulePane;
  score: number;
  overlap: boolean;
  hierarchyKind: string;
  qualityWinners: { coverage: string; efficiency: string; falsePositive: string };
  action: ActionKind;
  confidence: number;
  keepId: string | null;
  retireId: string | null;
  rationales: { semantic: string; hierarchy: string; quality: string; recommendation: string };
  decided: boolean;
  decision: string | null;
}

const pane = (rule: RuleSummary | null, fallbackId: string): RulePane => ({
  id: rule?.id ?? fallbackId,
  title: rule?.title ?? fallbackId,
  format: rule?.format ?? "?",
  platform: rule?.platform ?? "?",
  canonicalText: rule?.canonical_text ?? "",
});

export const toCard = (summary: RecommendationSummary): RecommendationCard | null => {
  const verdict = summary.verdict;
  const rec = summary.recommendation;
  if (!summary.gate_passed || verdict === null || rec === null) return null;
  return {
    analysisId: summary.analysis_id,
    target: pane(summary.target, summary.target_id),
    candidate: pane(summary.candidate, summary.candidate_id),
    // scores arrive integral; Math.round guards against a drifting client
    score: Math.round(verdict.score),
    overlap: verdict.overlap,
    hierarchyKind: summary.hierarchy?.relationship ?? "unknown",
    qualityWinners: {
      coverage: summary.quality?.coverage_winner ?? "?",
      efficiency: summary.quality?.efficiency_winner ?? "?",
      falsePositive: summary.quality?.false_positive_winner ?? "?",
    },
    action: rec.action,
    confidence: rec.confidence,
    keepId: rec.keep,
    retireId: rec.retire,
    rationales: {
      semantic: verdict.rationale,
      hierarchy: summary.hierarchy?.rationale ?? "",
      quality: summary.quality?.notes ?? "",
      recommendation: rec.rationale,
    },
    decided: summary.decision !== null,
    decision: summary.decision?.decision ?? null,
  };
};

/**
 * Builds the queue the analyst works through: gate-passed records only,
 * undecided unless asked otherwise, highest score first. The API already
 * orders this way; sorting again keeps the view stable if it ever stops.
 */
export const buildQueue = (
  summaries: RecommendationSummary[],
  includeDecided = false,
): RecommendationCard[] => {
  const cards: RecommendationCard[] = [];
  for (const summary of summaries) {
    const card = toCard(summary);
    if (card === null) continue;
    if (card.decided && !includeDecided) continue;
    cards.push(card);
  }
  return cards.sort(
    (a, b) => b.score - a.score || a.analysisId.localeCompare(b.analysisId),
  );
};

export const ACTION_LABELS: Record<ActionKind, string> = {
  keep_both: "Keep both",
  keep_superior: "Keep superior",
  merge: "Merge",
};
