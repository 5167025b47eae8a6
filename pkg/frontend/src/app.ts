// DOM wiring: the only file that touches document. One in-flight search at
// a time; config edits go straight to the API and re-render from its reply.

import { ApiError, NodeApi, NodeBootstrappingError } from "./api.js";
import {
  decisionViewFrom,
  renderBanner,
  renderDecisionPanel,
  renderResults,
  renderTopics,
  toggleTopic,
} from "./views.js";
import type { TopicsState } from "./types.js";

const api = new NodeApi("http://127.0.0.1:8470");

const form = document.querySelector<HTMLFormElement>("#search-form")!;
const input = document.querySelector<HTMLInputElement>("#query")!;
const resultsEl = document.querySelector<HTMLElement>("#results")!;
const panelEl = document.querySelector<HTMLElement>("#panel")!;
const bannerEl = document.querySelector<HTMLElement>("#banner")!;
const topicsEl = document.querySelector<HTMLElement>("#topics")!;
const statusEl = document.querySelector<HTMLElement>("#status")!;

let topicsState: TopicsState = { available: [], enabled: [] };
let searching = false;

async function runSearch(query: string): Promise<void> {
  if (searching) return;
  searching = true;
  bannerEl.innerHTML = "";
  try {
    const response = await api.search(query);
    if (response.status !== "ok") {
      bannerEl.innerHTML = renderBanner("blocked");
      resultsEl.innerHTML = "";
    } else {
      resultsEl.innerHTML = renderResults(response.results);
    }
    const view = decisionViewFrom(query, response);
    panelEl.innerHTML = renderDecisionPanel(view);
    if (view.degraded) {
      bannerEl.innerHTML = renderBanner("degraded");
    }
  } catch (err) {
    resultsEl.innerHTML = ""; // never show stale results next to an error
    panelEl.innerHTML = "";
    bannerEl.innerHTML = renderBanner(
      err instanceof NodeBootstrappingError ? "bootstrapping" : "node-down",
    );
  } finally {
    searching = false;
  }
}

function bindTopics(): void {
  topicsEl.innerHTML = renderTopics(topicsState);
  topicsEl.querySelectorAll<HTMLInputElement>("input[type=checkbox]").forEach((box) => {
    box.addEventListener("change", async () => {
      const next = toggleTopic(topicsState.enabled, box.dataset.topic!, box.checked);
      try {
        topicsState = await api.setTopics(next);
      } catch (err) {
        if (err instanceof ApiError) {
          // conflicting edit: fall back to the server's view of the config
          const config = await api.config();
          topicsState = config.topics;
        }
      }
      bindTopics();
    });
  });
}

async function refreshStatus(): Promise<void> {
  try {
    const status = await api.status();
    statusEl.textContent =
      `node ${status.node_id} | peers ${status.view_size} | ` +
      `fake pool ${status.table_size} | degraded ${status.degraded_count}`;
  } catch {
    statusEl.textContent = "node unreachable";
  }
}

async function init(): Promise<void> {
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const query = input.value.trim();
    if (query) void runSearch(query);
  });
  try {
    const config = await api.config();
    topicsState = config.topics;
  } catch {
    bannerEl.innerHTML = renderBanner("node-down");
  }
  bindTopics();
  await refreshStatus();
  setInterval(() => void refreshStatus(), 5000);
}

void init();
