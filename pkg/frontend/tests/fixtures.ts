// Builders for wire payloads, shaped exactly like service responses.

import type { RecommendationSummary, Rule, RuleSummary } from "../src/types.js";

export const ruleSummary = (id: string, overrides: Partial<RuleSummary> = {}): RuleSummary => ({
  id,
  title: `Rule ${id}`,
  format: "splunk",
  platform: "windows",
  status: "active",
  canonical_text: `search index=main ${id}`,
  ...overrides,
});

export const rule = (id: string, overrides: Partial<Rule> = {}): Rule => ({
  ...ruleSummary(id),
  description: "",
  raw_text: `search index=main ${id}`,
  tags: [],
  origin: "existing",
  manual_review_notes: [],
  ...overrides,
});

export interface SummaryOptions {
  analysisId?: string;
  target?: string;
  candidate?: string;
  score?: number;
  gatePassed?: boolean;
  action?: "keep_both" | "keep_superior" | "merge";
  keep?: string | null;
  retire?: string | null;
  decided?: boolean;
}

export const summary = (opts: SummaryOptions = {}): RecommendationSummary => {
  const targetId = opts.target ?? "new-a";
  const candidateId = opts.candidate ?? "lib-a";
  const score = opts.score ?? 88;
  const gatePassed = opts.gatePassed ?? true;
  const action = opts.action ?? "keep_both";
  return {
    analysis_id: opts.analysisId ?? `an-${targetId}-${candidateId}`,
    target_id: targetId,
    candidate_id: candidateId,
    retrieval_score: score / 100,
    gate_threshold: 75,
    gate_passed: gatePassed,
    prompt_mode: "chain_of_thought",
    model_id: "mock",
    created_at: "2024-01-01T00:00:00Z",
    verdict: gatePassed
      ? { score, overlap: true, rationale: `token overlap ${score}` }
      : { score, overlap: false, rationale: "below gate" },
    hierarchy: gatePassed
      ? { relationship: "equivalent", general_rule: null, rationale: "same scope" }
      : null,
    quality: gatePassed
      ? {
          coverage_winner: "tie",
          efficiency_winner: targetId,
          false_positive_winner: "tie",
          notes: "near-identical logic",
        }
      : null,
    recommendation: gatePassed
      ? {
          action,
          keep: opts.keep ?? targetId,
          retire: opts.retire ?? (action === "keep_superior" ? candidateId : null),
          merged_draft: null,
          confidence: 0.8,
          rationale: `suggest ${action}`,
        }
      : null,
    error: null,
    decision: opts.decided
      ? {
          decision_id: "d-1",
          analysis_id: opts.analysisId ?? `an-${targetId}-${candidateId}`,
          decision: "accept",
          analyst: "pat",
          note: "",
          decided_at: "2024-01-01T00:00:01Z",
          edited_action: null,
        }
      : null,
    target: ruleSummary(targetId),
    candidate: ruleSummary(candidateId),
  };
};
