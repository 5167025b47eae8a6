// Pure view logic: DecisionView construction, topic-toggle state, and HTML
// rendering as strings. No DOM access here, so everything is testable in
// plain node.

import type { DecisionView, ResultRow, SearchResponse, TopicsState } from "./types.js";

function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

// The panel mirrors the API decision exactly; nothing is recomputed.
export function decisionViewFrom(query: string, response: SearchResponse): DecisionView {
  return {
    query,
    k: response.decision.k,
    semantic_sensitive: response.decision.semantic_sensitive,
    linkability: response.decision.linkability,
    matched_topics: response.decision.matched_topics,
    degraded: response.degraded,
  };
}

export function renderResults(results: ResultRow[]): string {
  if (results.length === 0) {
    return '<p class="empty">No results for this query.</p>';
  }
  const items = results
    .map(
      (row) =>
        `<li value="${row.rank}"><a href="${escapeHtml(row.url)}" target="_blank" rel="noopener">` +
        `${escapeHtml(row.title || row.url)}</a><span class="url">${escapeHtml(row.url)}</span></li>`,
    )
    .join("");
  return `<ol class="results">${items}</ol>`;
}

export function renderDecisionPanel(view: DecisionView): string {
  const pieces: string[] = [];
  pieces.push(`<h3>Protection for &quot;${escapeHtml(view.query)}&quot;</h3>`);
  if (view.k === 0) {
    pieces.push('<p class="k">No fake queries needed.</p>');
  } else {
    pieces.push(`<p class="k">Sent with <strong>${view.k}</strong> fake queries.</p>`);
  }
  pieces.push(
    `<p class="linkability">Linkability: <strong>${(view.linkability * 100).toFixed(0)}%</strong></p>`,
  );
  if (view.semantic_sensitive) {
    const badges = view.matched_topics
      .map((topic) => `<span class="badge">${escapeHtml(topic)}</span>`)
      .join(" ");
    pieces.push(`<p class="topics">Sensitive topics: ${badges}</p>`);
  }
  if (view.degraded) {
    pieces.push(
      '<p class="warning">Degraded protection: fewer relays or fakes were available than requested.</p>',
    );
  }
  return `<section class="decision">${pieces.join("")}</section>`;
}

export function renderTopics(topics: TopicsState): string {
  const rows = topics.available
    .map((topic) => {
      const checked = topics.enabled.includes(topic) ? " checked" : "";
      return (
        `<label class="topic"><input type="checkbox" data-topic="${escapeHtml(topic)}"${checked}>` +
        `${escapeHtml(topic)}</label>`
      );
    })
    .join("");
  return `<fieldset class="topics">${rows}</fieldset>`;
}

// Next enabled-set after toggling one topic; the server remains the source
// of truth, this only shapes the PUT body.
export function toggleTopic(enabled: string[], topic: string, on: boolean): string[] {
  const next = enabled.filter((t) => t !== topic);
  if (on) {
    next.push(topic);
  }
  return next.sort();
}

export type BannerKind = "node-down" | "bootstrapping" | "degraded" | "blocked";

export function renderBanner(kind: BannerKind): string {
  const message: Record<BannerKind, string> = {
    "node-down": "Cannot reach the local node. Is it running?",
    bootstrapping: "The node is still bootstrapping peers; try again shortly.",
    degraded: "Protection was degraded for the last query.",
    blocked: "The search backend refused the request (rate limited).",
  };
  return `<div class="banner ${kind}">${message[kind]}</div>`;
}
