// Controller for the review console. All state here is a cache of API
// responses; a hard refresh rebuilds the identical view from the service.

import type { ApiClient, DecisionRequest } from "./api.js";
import { ApiError } from "./api.js";
import type { RecommendationCard } from "./cards.js";
import { buildQueue } from "./cards.js";
import { renderApp } from "./render.js";
import type { ActionKind, DecisionKind, Rule } from "./types.js";

export interface AppState {
  view: "queue" | "flagged";
  cards: RecommendationCard[];
  flagged: Rule[];
  banner: string | null;
  stale: boolean;
  toast: string | null;
}

const REVIEWED_NOTE = "reviewed";

export class App {
  readonly state: AppState = {
    view: "queue",
    cards: [],
    flagged: [],
    banner: null,
    stale: false,
    toast: null,
  };

  // idempotency key per analysis: minted on first submit, reused on retry,
  // dropped once the service has recorded the decision
  private readonly keys = new Map<string, string>();
  private readonly inflight = new Set<string>();

  constructor(
    private readonly api: ApiClient,
    private readonly onChange: () => void = () => {},
    private readonly newKey: () => string = () => crypto.randomUUID(),
  ) {}

  html(): string {
    return renderApp(this.state);
  }

  private notify(): void {
    this.onChange();
  }

  async refresh(): Promise<void> {
    if (this.state.view === "queue") {
      await this.listPending();
    } else {
      await this.loadFlagged();
    }
  }

  async showView(view: AppState["view"]): Promise<void> {
    this.state.view = view;
    this.state.toast = null;
    this.notify();
    await this.refresh();
  }

  async listPending(): Promise<void> {
    try {
      const summaries = await this.api.listRecommendations(true);
      this.state.cards = buildQueue(summaries);
      this.state.banner = null;
      this.state.stale = false;
    } catch (error) {
      this.state.banner = describe(error);
      this.state.stale = this.state.cards.length > 0;
    }
    this.notify();
  }

  async loadFlagged(): Promise<void> {
    try {
      this.state.flagged = await this.api.listRules("flagged");
      this.state.banner = null;
      this.state.stale = false;
    } catch (error) {
      this.state.banner = describe(error);
      this.state.stale = this.state.flagged.length > 0;
    }
    this.notify();
  }

  async submitDecision(
    analysisId: string,
    decision: DecisionKind,
    editedAction?: ActionKind,
  ): Promise<void> {
    if (this.inflight.has(analysisId)) return;
    this.inflight.add(analysisId);
    try {
      let key = this.keys.get(analysisId);
      if (key === undefined) {
        key = this.newKey();
        this.keys.set(analysisId, key);
      }
      const body: DecisionRequest = { decision };
      if (editedAction !== undefined) body.edited_action = editedAction;
      const response = await this.api.submitDecision(analysisId, body, key);
      this.keys.delete(analysisId);
      this.removeCard(analysisId);
      this.state.banner = null;
      this.state.stale = false;
      this.state.toast =
        response.retired_rule_id !== null
          ? `Decision recorded; retired rule ${response.retired_rule_id}`
          : "Decision recorded";
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        // decided elsewhere: the queue is the source of truth, reload it
        this.keys.delete(analysisId);
        this.state.toast = "Already decided elsewhere; refreshed";
        this.inflight.delete(analysisId);
        await this.listPending();
        return;
      }
      // transport failure: keep the idempotency key so a retry replays
      this.state.banner = describe(error);
      this.state.stale = this.state.cards.length > 0;
    } finally {
      this.inflight.delete(analysisId);
    }
    this.notify();
  }

  async markReviewed(ruleId: string): Promise<void> {
    if (this.inflight.has(ruleId)) return;
    this.inflight.add(ruleId);
    try {
      const result = await this.api.reviewRule(ruleId, REVIEWED_NOTE);
      for (const rule of this.state.flagged) {
        if (rule.id === ruleId) {
          rule.manual_review_notes = result.manual_review_notes;
        }
      }
      this.state.banner = null;
    } catch (error) {
      this.state.banner = describe(error);
    } finally {
      this.inflight.delete(ruleId);
    }
    this.notify();
  }

  private removeCard(analysisId: string): void {
    this.state.cards = this.state.cards.filter((card) => card.analysisId !== analysisId);
  }
}

const describe = (error: unknown): string => {
  if (error instanceof ApiError) return `${error.code}: ${error.message}`;
  if (error instanceof Error) return `connection failed: ${error.message}`;
  return "connection failed";
};
