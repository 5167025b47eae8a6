// Shapes of the node API payloads. The client renders these verbatim and
// never recomputes protection values.

export interface ProtectionDecision {
  semantic_sensitive: boolean;
  linkability: number;
  k: number;
  matched_topics: string[];
}

export interface ResultRow {
  url: string;
  title: string;
  rank: number;
}

export interface SearchResponse {
  status: string;
  results: ResultRow[];
  decision: ProtectionDecision;
  degraded: boolean;
}

export interface TopicsState {
  available: string[];
  enabled: string[];
}

export interface NodeConfig {
  k_max: number;
  alpha: number;
  view_size: number;
  table_capacity: number;
  bucket_size: number;
  deadline_ms: number;
  backend: string;
  topics: TopicsState;
}

export interface NodeStatus {
  node_id: string;
  ready: boolean;
  view_size: number;
  table_size: number;
  pending: number;
  degraded_count: number;
}

export interface DecisionLogEntry {
  query: string;
  k: number;
  semantic_sensitive: boolean;
  linkability: number;
  matched_topics: string[];
  degraded: boolean;
  at_ms: number;
}

// What the protection panel shows for one search: the API decision,
// mirrored exactly, plus the query echo and the degraded flag.
export interface DecisionView {
  query: string;
  k: number;
  semantic_sensitive: boolean;
  linkability: number;
  matched_topics: string[];
  degraded: boolean;
}
