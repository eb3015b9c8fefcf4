// Drives a real service process over HTTP: the UI layers under test are
// exactly the ones the browser bundle ships.

import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { ApiClient, ApiError } from "../src/api.js";
import { App } from "../src/app.js";
import { MemoryStorage, TokenStore } from "../src/token.js";

const REPO_ROOT = fileURLToPath(new URL("../..", import.meta.url));
const TOKEN = "e2e-secret";
const PORT = 21000 + (process.pid % 2000);
const BASE = `http://127.0.0.1:${PORT}`;

let child: ChildProcess;
let storeDir: string;
let stderrBuf = "";

const sleep = (ms: number) => new Promise((resolve) => setTimeout(resolve, ms));

const authedClient = (counter?: { posts: number }): ApiClient => {
  const store = new TokenStore(new MemoryStorage());
  store.set(TOKEN);
  return new ApiClient(BASE, store, async (url, init) => {
    if (counter && init?.method === "POST") counter.posts += 1;
    return fetch(url, init);
  });
};

const waitJob = async (client: ApiClient, jobId: string): Promise<void> => {
  const deadline = Date.now() + 20000;
  for (;;) {
    const job = await client.getJob(jobId);
    if (job.state === "done") return;
    if (job.state === "failed") throw new Error(`job ${jobId} failed: ${job.error}`);
    if (Date.now() > deadline) throw new Error(`job ${jobId} stuck in ${job.state}`);
    await sleep(50);
  }
};

const splunkDoc = (id: string, search: string): string =>
  `id: ${id}\nname: Rule ${id}\nplatform: windows\nsearch: ${search}\n`;

// Jaccard over \w+ token sets drives the heuristic mock, so these three
// pairs land at semantic scores 100, 89 and 75 against the 75 gate.
const SEED: Array<{ id: string; search: string; origin: "existing" | "new" }> = [
  { id: "lib-a", search: "index=endpoint EventCode=4688 powershell encodedcommand suspicious", origin: "existing" },
  { id: "lib-b", search: "index=network sourcetype=dns query volume threshold beacon", origin: "existing" },
  { id: "lib-c", search: "index=aws cloudtrail root console login event", origin: "existing" },
  { id: "new-a", search: "index=endpoint EventCode=4688 powershell encodedcommand suspicious", origin: "new" },
  { id: "new-b", search: "index=network sourcetype=dns query volume threshold beacon exfil", origin: "new" },
  { id: "new-c", search: "index=aws cloudtrail root console login audit", origin: "new" },
];

// long enough to take the embedder's overflow path and get flagged
const OVERSIZE = Array.from({ length: 4200 }, (_, i) => `t${i}`).join(" ");

beforeAll(async () => {
  storeDir = mkdtempSync(join(tmpdir(), "review-ui-e2e-"));
  child = spawn(
    "python3",
    ["-m", "rulegenie.cli", "serve", "--store", storeDir, "--host", "127.0.0.1", "--port", String(PORT)],
    { cwd: REPO_ROOT, env: { ...process.env, RULEGENIE_API_TOKEN: TOKEN } },
  );
  child.stderr?.on("data", (chunk: Buffer) => {
    stderrBuf += chunk.toString();
  });
  const deadline = Date.now() + 30000;
  for (;;) {
    try {
      const res = await fetch(`${BASE}/api/health`);
      if (res.ok) break;
    } catch {
      // not listening yet
    }
    if (Date.now() > deadline) {
      throw new Error(`service never came up on ${BASE}\n${stderrBuf}`);
    }
    await sleep(150);
  }

  const client = authedClient();
  for (const seed of SEED) {
    const posted = await client.ingestRule(splunkDoc(seed.id, seed.search), "splunk", {
      origin: seed.origin,
    });
    await waitJob(client, posted.job_id);
  }
  const oversized = await client.ingestRule(splunkDoc("big-rule", OVERSIZE), "splunk", {
    origin: "new",
  });
  await waitJob(client, oversized.job_id);
}, 120000);

afterAll(async () => {
  if (child && child.exitCode === null) {
    child.kill("SIGKILL");
    await new Promise((resolve) => child.once("exit", resolve));
  }
  rmSync(storeDir, { recursive: true, force: true });
});

describe("auth", () => {
  it("rejects unauthenticated calls but leaves health open", async () => {
    const anon = new ApiClient(BASE, new TokenStore(new MemoryStorage()));
    await expect(anon.health()).resolves.toMatchObject({ status: "ok" });
    const err = await anon.listRules().catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(401);
    expect((err as ApiError).code).toBe("unauthorized");
  });
});

describe("pending queue", () => {
  it("lists the three gated pairs score-descending", async () => {
    const app = new App(authedClient());
    await app.listPending();
    expect(app.state.banner).toBeNull();
    expect(app.state.cards.map((c) => c.score)).toEqual([100, 89, 75]);
    const top = app.state.cards[0];
    expect(new Set([top?.target.id, top?.candidate.id])).toEqual(new Set(["lib-a", "new-a"]));
    const superior = app.state.cards[1];
    expect(superior?.action).toBe("keep_superior");
    expect(superior?.retireId).toBe("lib-b");
  });

  it("reproduces the identical view from a hard refresh", async () => {
    const first = new App(authedClient());
    const second = new App(authedClient());
    await first.listPending();
    await second.listPending();
    expect(first.html()).toBe(second.html());
    expect(first.html()).toContain('class="badge score">100<');
  });
});

describe("decision flow", () => {
  it("accepts the keep-superior card once, retiring the losing rule", async () => {
    const counter = { posts: 0 };
    const client = authedClient(counter);
    let minted = 0;
    const app = new App(client, () => {}, () => `e2e-key-${++minted}`);
    await app.listPending();
    const card = app.state.cards.find((c) => c.action === "keep_superior");
    expect(card).toBeDefined();
    const analysisId = card!.analysisId;

    counter.posts = 0;
    // double-click: the in-flight guard must collapse this to one POST
    await Promise.all([
      app.submitDecision(analysisId, "accept"),
      app.submitDecision(analysisId, "accept"),
    ]);
    expect(counter.posts).toBe(1);
    expect(app.state.toast).toBe("Decision recorded; retired rule lib-b");
    expect(app.state.cards.map((c) => c.score)).toEqual([100, 75]);

    // same key, same body: the service replays the stored response
    const replay = await client.submitDecision(analysisId, { decision: "accept" }, "e2e-key-1");
    expect(replay.retired_rule_id).toBe("lib-b");

    // same key, different body: conflict
    const conflict = await client
      .submitDecision(analysisId, { decision: "accept", note: "changed" }, "e2e-key-1")
      .catch((e: unknown) => e);
    expect((conflict as ApiError).status).toBe(409);
    expect((conflict as ApiError).code).toBe("idempotency_conflict");

    // fresh key on a decided record: already decided
    const repeat = await client
      .submitDecision(analysisId, { decision: "accept" }, "other-key")
      .catch((e: unknown) => e);
    expect((repeat as ApiError).status).toBe(409);
    expect((repeat as ApiError).code).toBe("already_decided");

    const loser = await client.getRule("lib-b");
    expect(loser.status).toBe("retired");
  });

  it("surfaces a concurrent decision as a refresh, not an error", async () => {
    const client = authedClient();
    const app = new App(client);
    await app.listPending();
    const card = app.state.cards.find((c) => c.score === 75);
    expect(card).toBeDefined();

    // someone else decides the same record out from under the app
    await client.submitDecision(card!.analysisId, { decision: "reject" }, "rival-key");

    await app.submitDecision(card!.analysisId, "accept");
    expect(app.state.toast).toContain("Already decided");
    expect(app.state.cards.map((c) => c.score)).toEqual([100]);
    expect(app.state.banner).toBeNull();
  });

  it("re-running a batch never resurrects retired rules", async () => {
    const client = authedClient();
    const before = await client.listRecommendations(false);
    const batch = await client.startBatch("retrospective");
    await waitJob(client, batch.job_id);

    const job = await client.getJob(batch.job_id);
    // actives are lib-a, lib-c, new-a, new-b, new-c: the retired and
    // flagged rules are out of the pool
    expect(job.counts?.["n_targets"]).toBe(5);

    const after = await client.listRecommendations(false);
    expect(after.map((r) => r.analysis_id).sort()).toEqual(
      before.map((r) => r.analysis_id).sort(),
    );
    for (const rec of after) {
      if (rec.decision !== null) continue;
      expect([rec.target_id, rec.candidate_id]).not.toContain("lib-b");
    }

    const app = new App(client);
    await app.listPending();
    expect(app.state.cards.map((c) => c.score)).toEqual([100]);
  });
});

describe("flagged rules view", () => {
  it("lists the oversized rule and records a review note", async () => {
    const client = authedClient();
    const app = new App(client);
    await app.showView("flagged");
    expect(app.state.flagged.map((r) => r.id)).toEqual(["big-rule"]);
    expect(app.html()).toContain("needs review");

    await app.markReviewed("big-rule");
    expect(app.html()).toContain("reviewed (1)");

    const rule = await client.getRule("big-rule");
    expect(rule.status).toBe("flagged");
    expect(rule.manual_review_notes).toEqual(["reviewed"]);
  });
});
