// Wire types for the service API. Field names mirror the JSON payloads
// exactly; everything here is read-only from the UI's point of view.

export type RuleFormat = "sigma" | "splunk" | "aql";
export type RuleStatus = "active" | "retired" | "flagged";
export type ActionKind = "keep_superior" | "keep_both" | "merge";
export type DecisionKind = "accept" | "reject" | "modify_then_accept";

export interface RuleSummary {
  id: string;
  title: string;
  format: RuleFormat;
  platform: string;
  status: RuleStatus;
  canonical_text: string;
}

export interface Rule extends RuleSummary {
  description: string;
  raw_text: string;
  tags: string[];
  origin: "existing" | "new";
  manual_review_notes: string[];
}

export interface Verdict {
  score: number;
  overlap: boolean;
  rationale: string;
}

export interface Hierarchy {
  relationship: string;
  general_rule: string | null;
  rationale: string;
}

export interface Quality {
  coverage_winner: string;
  efficiency_winner: string;
  false_positive_winner: string;
  notes: string;
}

export interface RecommendationPayload {
  action: ActionKind;
  keep: string | null;
  retire: string | null;
  merged_draft: string | null;
  confidence: number;
  rationale: string;
}

export interface Decision {
  decision_id: string;
  analysis_id: string;
  decision: DecisionKind;
  analyst: string;
  note: string;
  decided_at: string;
  edited_action: ActionKind | null;
}

export interface RecommendationSummary {
  analysis_id: string;
  target_id: string;
  candidate_id: string;
  retrieval_score: number;
  gate_threshold: number;
  gate_passed: boolean;
  prompt_mode: string;
  model_id: string;
  created_at: string;
  verdict: Verdict | null;
  hierarchy: Hierarchy | null;
  quality: Quality | null;
  recommendation: RecommendationPayload | null;
  error: string | null;
  decision: Decision | null;
  target: RuleSummary | null;
  candidate: RuleSummary | null;
}

export interface DecisionResponse extends Decision {
  revision: number;
  retired_rule_id: string | null;
}

export interface RulesPage {
  rules: Rule[];
  revision: number;
  next_page_token: string | null;
}

export interface JobInfo {
  id: string;
  kind: "batch" | "rule";
  mode: string | null;
  state: "queued" | "running" | "done" | "failed";
  progress: { pairs_done: number; pairs_planned: number };
  counts: Record<string, unknown>;
  error: string | null;
  target_id: string | null;
}
