// HTML templates. Pure string -> string so every view is testable in node;
// the browser entry point owns the DOM.

import type { RecommendationCard } from "./cards.js";
import { ACTION_LABELS } from "./cards.js";
import type { DiffRow, DiffSpan } from "./diff.js";
import { buildLineDiff } from "./diff.js";
import type { ActionKind, Rule } from "./types.js";

export function escapeHtml(str: string): string {
  return str
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#039;");
}

const renderSpans = (spans: DiffSpan[]): string =>
  spans
    .map((span) =>
      span.changed
        ? `<mark>${escapeHtml(span.text)}</mark>`
        : escapeHtml(span.text),
    )
    .join("");

const renderDiffRow = (row: DiffRow): string => `<tr class="diff-${row.kind}">
	<td class="diff-no">${row.leftNo ?? ""}</td>
	<td class="diff-cell">${renderSpans(row.left)}</td>
	<td class="diff-no">${row.rightNo ?? ""}</td>
	<td class="diff-cell">${renderSpans(row.right)}</td>
</tr>`;

export function renderDiff(leftText: string, rightText: string): string {
  const rows = buildLineDiff(leftText, rightText).map(renderDiffRow).join("\n");
  return `<table class="diff">
<tbody>
${rows}
</tbody>
</table>`;
}

const OTHER_ACTIONS: Record<ActionKind, ActionKind[]> = {
  keep_both: ["keep_superior", "merge"],
  keep_superior: ["keep_both", "merge"],
  merge: ["keep_both", "keep_superior"],
};

function renderModifyControls(card: RecommendationCard): string {
  const options = OTHER_ACTIONS[card.action]
    .map((action) => `<option value="${action}">${ACTION_LABELS[action]}</option>`)
    .join("");
  return `<label class="modify">Change action to
		<select data-role="edited-action" data-analysis="${escapeHtml(card.analysisId)}">${options}</select>
	</label>
	<button data-action="modify" data-analysis="${escapeHtml(card.analysisId)}">Modify + accept</button>`;
}

export function renderCard(card: RecommendationCard): string {
  const retireLine = card.retireId
    ? `<p class="retire-note">Accepting retires <code>${escapeHtml(card.retireId)}</code></p>`
    : "";
  const decidedBadge = card.decided
    ? `<span class="badge decided">decided: ${escapeHtml(card.decision ?? "")}</span>`
    : "";
  const controls = card.decided
    ? ""
    : `<div class="controls">
		<button data-action="accept" data-analysis="${escapeHtml(card.analysisId)}">Accept</button>
		<button data-action="reject" data-analysis="${escapeHtml(card.analysisId)}">Reject</button>
		${renderModifyControls(card)}
	</div>`;
  return `<article class="card" data-card="${escapeHtml(card.analysisId)}">
	<header>
		<span class="badge score">${card.score}</span>
		<span class="badge action">${ACTION_LABELS[card.action]}</span>
		<span class="confidence">confidence ${card.confidence.toFixed(2)}</span>
		${decidedBadge}
	</header>
	<div class="pair">
		<div class="pane">
			<h3>${escapeHtml(card.target.title)}</h3>
			<p class="meta">${escapeHtml(card.target.id)} &middot; ${escapeHtml(card.target.format)} &middot; ${escapeHtml(card.target.platform)}</p>
		</div>
		<div class="pane">
			<h3>${escapeHtml(card.candidate.title)}</h3>
			<p class="meta">${escapeHtml(card.candidate.id)} &middot; ${escapeHtml(card.candidate.format)} &middot; ${escapeHtml(card.candidate.platform)}</p>
		</div>
	</div>
	${renderDiff(card.target.canonicalText, card.candidate.canonicalText)}
	<dl class="stages">
		<dt>Semantic (${card.score}, overlap ${card.overlap ? "yes" : "no"})</dt>
		<dd>${escapeHtml(card.rationales.semantic)}</dd>
		<dt>Hierarchy (${escapeHtml(card.hierarchyKind)})</dt>
		<dd>${escapeHtml(card.rationales.hierarchy)}</dd>
		<dt>Quality (coverage ${escapeHtml(card.qualityWinners.coverage)}, efficiency ${escapeHtml(card.qualityWinners.efficiency)}, FP ${escapeHtml(card.qualityWinners.falsePositive)})</dt>
		<dd>${escapeHtml(card.rationales.quality)}</dd>
		<dt>Recommendation</dt>
		<dd>${escapeHtml(card.rationales.recommendation)}</dd>
	</dl>
	${retireLine}
	${controls}
</article>`;
}

export function renderQueue(cards: RecommendationCard[]): string {
  if (cards.length === 0) {
    return `<div class="empty">No pending recommendations.</div>`;
  }
  return `<div class="queue">
${cards.map(renderCard).join("\n")}
</div>`;
}

export function renderFlagged(rules: Rule[]): string {
  if (rules.length === 0) {
    return `<div class="empty">No rules are flagged for manual review.</div>`;
  }
  const items = rules
    .map((rule) => {
      const reviewed = rule.manual_review_notes.length > 0;
      const badge = reviewed
        ? `<span class="badge reviewed">reviewed (${rule.manual_review_notes.length})</span>`
        : `<span class="badge flagged">needs review</span>`;
      const button = reviewed
        ? ""
        : `<button data-action="mark-reviewed" data-rule="${escapeHtml(rule.id)}">Mark reviewed</button>`;
      return `<article class="flagged-rule" data-rule="${escapeHtml(rule.id)}">
	<header>
		<h3>${escapeHtml(rule.title)}</h3>
		${badge}
	</header>
	<p class="meta">${escapeHtml(rule.id)} &middot; ${escapeHtml(rule.format)} &middot; ${escapeHtml(rule.platform)}</p>
	<pre class="raw">${escapeHtml(rule.raw_text)}</pre>
	${button}
</article>`;
    })
    .join("\n");
  return `<div class="flagged-list">
${items}
</div>`;
}

export function renderBanner(message: string | null, stale: boolean): string {
  if (message === null) return "";
  const staleNote = stale
    ? ` <span class="stale">showing last fetched data</span>`
    : "";
  return `<div class="banner error" role="alert">${escapeHtml(message)}${staleNote}</div>`;
}

export function renderToast(message: string | null): string {
  if (message === null) return "";
  return `<div class="toast" role="status">${escapeHtml(message)}</div>`;
}

export interface ViewState {
  view: "queue" | "flagged";
  cards: RecommendationCard[];
  flagged: Rule[];
  banner: string | null;
  stale: boolean;
  toast: string | null;
}

export function renderApp(state: ViewState): string {
  const tab = (name: ViewState["view"], label: string): string =>
    `<button class="tab${state.view === name ? " active" : ""}" data-action="view" data-view="${name}">${label}</button>`;
  const body = state.view === "queue" ? renderQueue(state.cards) : renderFlagged(state.flagged);
  return `<nav class="tabs">
	${tab("queue", "Pending recommendations")}
	${tab("flagged", "Flagged rules")}
	<button class="refresh" data-action="refresh">Refresh</button>
</nav>
${renderBanner(state.banner, state.stale)}
${renderToast(state.toast)}
<main>
${body}
</main>`;
}
