/** Shared wire types for the attrql HTTP service. */

export interface TensorPayload {
  shape: number[];
  data: number[];
}

export interface BackendOverrides {
  backend?: "shapley-exact" | "shapley-sampled" | "integrated-gradients" | "smoothgrad";
  samples?: number;
  steps?: number;
  noise_sigma?: number;
  noise_count?: number;
  seed?: number;
  epsilon?: number;
  target_class?: number | null;
}

export interface ResultPayload {
  shape: number[];
  kind: "single" | "pair" | "tuple";
  values?: number[];
  left?: number[];
  right?: number[];
  maps?: number[][];
  meta?: Record<string, unknown>;
}

export interface QueryResponse {
  result_ref: string;
  result: ResultPayload;
  wall_time_ms: number;
}

export interface ApiErrorEntry {
  kind: string;
  message: string;
  location?: string;
  remediation?: string;
  offset?: number;
}

export interface HistoryEntry {
  query_text: string;
  expr: Record<string, unknown>;
  result_ref: string;
  wall_time_ms: number;
  timestamp: number;
}

export interface SpectralReportPayload {
  scores: number[];
  mean: number;
  std: number;
  threshold_k: number;
  cutoff: number;
  flagged: number[];
}

export interface EditPayload {
  kind: "nullify" | "substitute" | "transform";
  window?: { indices: number[]; rect?: number[] };
  source_ref?: string;
  transform_op?: "scale" | "rotate90" | "shift";
  params?: number[];
}

/** Inclusive grid rectangle, row/col coordinates. */
export interface Rect {
  r0: number;
  c0: number;
  r1: number;
  c1: number;
}
