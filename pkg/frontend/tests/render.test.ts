import { describe, expect, it } from "vitest";
import { buildQueue, toCard } from "../src/cards.js";
import {
  escapeHtml,
  renderApp,
  renderBanner,
  renderCard,
  renderDiff,
  renderFlagged,
  renderQueue,
} from "../src/render.js";
import { rule, summary } from "./fixtures.js";

describe("escapeHtml", () => {
  it("neutralises markup", () => {
    expect(escapeHtml(`<img src=x onerror="pwn('&')">`)).toBe(
      "&lt;img src=x onerror=&quot;pwn(&#039;&amp;&#039;)&quot;&gt;",
    );
  });
});

describe("renderQueue", () => {
  it("shows the empty state when nothing is pending", () => {
    expect(renderQueue([])).toContain("No pending recommendations.");
  });

  it("renders one card per queue entry in order", () => {
    const html = renderQueue(
      buildQueue([
        summary({ analysisId: "an-hi", score: 95 }),
        summary({ analysisId: "an-lo", score: 80 }),
      ]),
    );
    expect(html.indexOf('data-card="an-hi"')).toBeGreaterThanOrEqual(0);
    expect(html.indexOf('data-card="an-hi"')).toBeLessThan(html.indexOf('data-card="an-lo"'));
  });
});

describe("renderCard", () => {
  const card = () => {
    const c = toCard(summary({ analysisId: "an-1", score: 89, action: "keep_superior" }));
    if (c === null) throw new Error("fixture should gate-pass");
    return c;
  };

  it("shows the integer score badge and action controls", () => {
    const html = renderCard(card());
    expect(html).toContain('<span class="badge score">89</span>');
    expect(html).toContain('data-action="accept" data-analysis="an-1"');
    expect(html).toContain('data-action="reject" data-analysis="an-1"');
    expect(html).toContain('data-action="modify" data-analysis="an-1"');
  });

  it("offers only the other two action kinds in the modify select", () => {
    const html = renderCard(card());
    expect(html).toContain('<option value="keep_both">');
    expect(html).toContain('<option value="merge">');
    expect(html).not.toContain('<option value="keep_superior">');
  });

  it("names the rule that accepting would retire", () => {
    expect(renderCard(card())).toContain("Accepting retires <code>lib-a</code>");
  });

  it("includes all four stage rationales", () => {
    const html = renderCard(card());
    expect(html).toContain("token overlap 89");
    expect(html).toContain("same scope");
    expect(html).toContain("near-identical logic");
    expect(html).toContain("suggest keep_superior");
  });

  it("escapes rule-controlled text", () => {
    const hostile = summary({ analysisId: "an-x" });
    hostile.target.title = `<script>alert(1)</script>`;
    const c = toCard(hostile);
    const html = renderCard(c!);
    expect(html).not.toContain("<script>alert(1)");
    expect(html).toContain("&lt;script&gt;");
  });

  it("drops the controls and badges decided cards", () => {
    const c = toCard(summary({ analysisId: "an-done", decided: true }));
    const html = renderCard(c!);
    expect(html).toContain("decided: accept");
    expect(html).not.toContain('data-action="accept"');
  });
});

describe("renderDiff", () => {
  it("wraps changed words in mark tags", () => {
    const html = renderDiff("search index=web", "search index=mail");
    expect(html).toContain("<mark>index=web</mark>");
    expect(html).toContain("<mark>index=mail</mark>");
    expect(html).toContain("search ");
  });
});

describe("renderFlagged", () => {
  it("shows the empty state", () => {
    expect(renderFlagged([])).toContain("No rules are flagged");
  });

  it("badges unreviewed rules and offers the action", () => {
    const html = renderFlagged([rule("big-rule", { status: "flagged" })]);
    expect(html).toContain("needs review");
    expect(html).toContain('data-action="mark-reviewed" data-rule="big-rule"');
  });

  it("switches the badge once a note exists", () => {
    const html = renderFlagged([
      rule("big-rule", { status: "flagged", manual_review_notes: ["reviewed"] }),
    ]);
    expect(html).toContain("reviewed (1)");
    expect(html).not.toContain('data-action="mark-reviewed"');
  });
});

describe("renderBanner and renderApp", () => {
  it("labels stale data on errors", () => {
    const html = renderBanner("connection failed: boom", true);
    expect(html).toContain("connection failed: boom");
    expect(html).toContain("showing last fetched data");
    expect(renderBanner("nope", false)).not.toContain("stale");
    expect(renderBanner(null, false)).toBe("");
  });

  it("renders the active tab and current view", () => {
    const html = renderApp({
      view: "flagged",
      cards: [],
      flagged: [],
      banner: null,
      stale: false,
      toast: "Decision recorded",
    });
    expect(html).toContain('class="tab active" data-action="view" data-view="flagged"');
    expect(html).toContain("No rules are flagged");
    expect(html).toContain("Decision recorded");
  });
});
