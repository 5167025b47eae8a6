// Typed client for the node's loopback API. fetch is injected so tests can
// stub the transport without a browser.

import type {
  DecisionLogEntry,
  NodeConfig,
  NodeStatus,
  SearchResponse,
  TopicsState,
} from "./types.js";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class NodeBootstrappingError extends Error {
  constructor() {
    super("node is still bootstrapping");
    this.name = "NodeBootstrappingError";
  }
}

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(`api error ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

async function readError(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { error?: string };
    return body.error ?? response.statusText;
  } catch {
    return response.statusText;
  }
}

export class NodeApi {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, init);
    if (response.status === 503) {
      throw new NodeBootstrappingError();
    }
    if (!response.ok) {
      throw new ApiError(response.status, await readError(response));
    }
    return (await response.json()) as T;
  }

  search(query: string): Promise<SearchResponse> {
    return this.request<SearchResponse>("/search", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ q: query }),
    });
  }

  status(): Promise<NodeStatus> {
    return this.request<NodeStatus>("/status");
  }

  config(): Promise<NodeConfig> {
    return this.request<NodeConfig>("/config");
  }

  async setTopics(topics: string[]): Promise<TopicsState> {
    const config = await this.request<NodeConfig>("/config/topics", {
      method: "PUT",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(topics),
    });
    return config.topics;
  }

  async recentDecisions(): Promise<DecisionLogEntry[]> {
    const payload = await this.request<{ decisions: DecisionLogEntry[] }>(
      "/decisions/recent",
    );
    return payload.decisions;
  }
}
