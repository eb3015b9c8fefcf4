// Browser entry point: wires the controller to the DOM. Everything above
// this file is plain data in, HTML string out.

import { ApiClient, ApiError } from "./api.js";
import { App } from "./app.js";
import { TokenStore } from "./token.js";
import type { ActionKind, DecisionKind } from "./types.js";

const mount = document.getElementById("app");
if (mount === null) throw new Error("missing #app mount point");

const token = new TokenStore(window.sessionStorage);
const api = new ApiClient("", token);
const app = new App(api, () => {
  mount.innerHTML = app.html();
});

// token is asked for once and kept in session storage; a wrong entry just
// triggers the prompt again on the next 401
async function ensureToken(): Promise<void> {
  for (;;) {
    try {
      await api.health();
      return;
    } catch (error) {
      if (error instanceof ApiError && error.status === 401) {
        const entered = window.prompt("API bearer token:") ?? "";
        token.set(entered);
        continue;
      }
      throw error;
    }
  }
}

const editedActionFor = (analysisId: string): ActionKind | undefined => {
  const select = mount.querySelector<HTMLSelectElement>(
    `select[data-role="edited-action"][data-analysis="${analysisId}"]`,
  );
  return select === null ? undefined : (select.value as ActionKind);
};

mount.addEventListener("click", (event) => {
  const target = (event.target as HTMLElement).closest<HTMLElement>("[data-action]");
  if (target === null) return;
  const action = target.dataset["action"];
  const analysisId = target.dataset["analysis"] ?? "";
  const handled = (() => {
    switch (action) {
      case "view":
        return app.showView(target.dataset["view"] === "flagged" ? "flagged" : "queue");
      case "refresh":
        return app.refresh();
      case "accept":
      case "reject":
        return app.submitDecision(analysisId, action as DecisionKind);
      case "modify":
        return app.submitDecision(analysisId, "modify_then_accept", editedActionFor(analysisId));
      case "mark-reviewed":
        return app.markReviewed(target.dataset["rule"] ?? "");
      default:
        return null;
    }
  })();
  handled?.catch((error) => {
    console.error(error);
  });
});

ensureToken()
  .then(() => app.listPending())
  .catch((error) => {
    mount.innerHTML = `<div class="banner error">cannot reach the service: ${String(error)}</div>`;
  });
