// Thin typed client over the service API. Every mutation the UI performs
// goes through here; there is no UI-only endpoint.

import type {
  ActionKind,
  DecisionKind,
  DecisionResponse,
  JobInfo,
  RecommendationSummary,
  Rule,
  RulesPage,
} from "./types.js";
import type { TokenStore } from "./token.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export interface DecisionRequest {
  decision: DecisionKind;
  analyst?: string;
  note?: string;
  edited_action?: ActionKind;
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly token: TokenStore,
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
    extraHeaders?: Record<string, string>,
  ): Promise<T> {
    const headers: Record<string, string> = { ...extraHeaders };
    const bearer = this.token.get();
    if (bearer) headers["Authorization"] = `Bearer ${bearer}`;
    if (body !== undefined) headers["Content-Type"] = "application/json";
    const response = await this.fetchImpl(this.baseUrl + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) {
      let code = "http_error";
      let message = `${response.status} ${response.statusText}`;
      try {
        const data = (await response.json()) as { code?: string; message?: string };
        if (data.code) code = data.code;
        if (data.message) message = data.message;
      } catch {
        // non-JSON error body; keep the status line
      }
      throw new ApiError(response.status, code, message);
    }
    return (await response.json()) as T;
  }

  health(): Promise<{ status: string; rules: number }> {
    return this.request("GET", "/api/health");
  }

  async listRecommendations(undecided: boolean): Promise<RecommendationSummary[]> {
    const query = undecided ? "?undecided=true" : "";
    const data = await this.request<{ recommendations: RecommendationSummary[] }>(
      "GET",
      `/api/recommendations${query}`,
    );
    return data.recommendations;
  }

  /** Walks the pagination cursor so callers always see the full set. */
  async listRules(status?: string): Promise<Rule[]> {
    const rules: Rule[] = [];
    let token: string | null = null;
    do {
      const params = new URLSearchParams();
      if (status) params.set("status", status);
      if (token) params.set("page_token", token);
      const qs = params.toString();
      const page: RulesPage = await this.request("GET", `/api/rules${qs ? `?${qs}` : ""}`);
      rules.push(...page.rules);
      token = page.next_page_token;
    } while (token !== null);
    return rules;
  }

  getRule(ruleId: string): Promise<Rule> {
    return this.request("GET", `/api/rules/${encodeURIComponent(ruleId)}`);
  }

  submitDecision(
    analysisId: string,
    body: DecisionRequest,
    idempotencyKey: string,
  ): Promise<DecisionResponse> {
    return this.request(
      "POST",
      `/api/recommendations/${encodeURIComponent(analysisId)}/decision`,
      body,
      { "Idempotency-Key": idempotencyKey },
    );
  }

  reviewRule(ruleId: string, note: string): Promise<{ rule_id: string; manual_review_notes: string[] }> {
    return this.request("POST", `/api/rules/${encodeURIComponent(ruleId)}/review`, { note });
  }

  ingestRule(
    source: string,
    format: string,
    opts: { origin?: string; idempotencyKey?: string } = {},
  ): Promise<{ rule_id: string; job_id: string; rule: Rule }> {
    const body: Record<string, string> = { source, format };
    if (opts.origin) body["origin"] = opts.origin;
    const headers = opts.idempotencyKey
      ? { "Idempotency-Key": opts.idempotencyKey }
      : undefined;
    return this.request("POST", "/api/rules", body, headers);
  }

  startBatch(mode: "prospective" | "retrospective"): Promise<{ job_id: string; state: string }> {
    return this.request("POST", "/api/batches", { mode });
  }

  getJob(jobId: string): Promise<JobInfo> {
    return this.request("GET", `/api/jobs/${encodeURIComponent(jobId)}`);
  }
}
