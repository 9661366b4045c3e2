/** Thin typed client over the attrql service. Every method either returns the
 * parsed body or throws ApiError carrying the service's error entries. */

import type {
  ApiErrorEntry,
  BackendOverrides,
  EditPayload,
  HistoryEntry,
  QueryResponse,
  SpectralReportPayload,
  TensorPayload,
} from "./types.js";

export class ApiError extends Error {
  readonly status: number;
  readonly errors: ApiErrorEntry[];

  constructor(status: number, errors: ApiErrorEntry[]) {
    super(errors.map((e) => `${e.kind}: ${e.message}`).join("; ") || `HTTP ${status}`);
    this.status = status;
    this.errors = errors;
  }
}

export class WorkbenchApi {
  constructor(readonly baseUrl: string) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const resp = await fetch(`${this.baseUrl}${path}`, {
      method,
      headers: body !== undefined ? { "Content-Type": "application/json" } : undefined,
      body: body !== undefined ? JSON.stringify(body) : undefined,
    });
    if (!resp.ok) {
      let errors: ApiErrorEntry[] = [];
      try {
        const payload = (await resp.json()) as { errors?: ApiErrorEntry[] };
        errors = payload.errors ?? [];
      } catch {
        // non-JSON error body: fall through with the bare status
      }
      throw new ApiError(resp.status, errors);
    }
    return (await resp.json()) as T;
  }

  postModel(model: object): Promise<{ ref: string }> {
    return this.request("POST", "/models", model);
  }

  getModel(ref: string): Promise<Record<string, unknown>> {
    return this.request("GET", `/models/${ref}`);
  }

  postInput(tensor: TensorPayload): Promise<{ ref: string }> {
    return this.request("POST", "/inputs", tensor);
  }

  getInput(ref: string): Promise<TensorPayload> {
    return this.request("GET", `/inputs/${ref}`);
  }

  postDataset(dataset: object): Promise<{ ref: string }> {
    return this.request("POST", "/datasets", dataset);
  }

  truncate(modelRef: string, stage: number, datasetRef: string):
      Promise<{ ref: string; stage: number; training_accuracy: number }> {
    return this.request("POST", `/models/${modelRef}/truncate`, {
      stage,
      dataset: datasetRef,
    });
  }

  openSession(): Promise<{ id: string }> {
    return this.request("POST", "/sessions");
  }

  bindModel(sessionId: string, name: string, ref: string): Promise<unknown> {
    return this.request("POST", `/sessions/${sessionId}/bind`, { name, kind: "model", ref });
  }

  bindInput(sessionId: string, name: string, ref: string): Promise<unknown> {
    return this.request("POST", `/sessions/${sessionId}/bind`, { name, kind: "input", ref });
  }

  bindWindowRect(sessionId: string, name: string, rect: number[], inputRef: string): Promise<unknown> {
    return this.request("POST", `/sessions/${sessionId}/bind`, {
      name,
      kind: "window",
      rect,
      input_ref: inputRef,
    });
  }

  query(sessionId: string, q: string, backend?: BackendOverrides): Promise<QueryResponse> {
    return this.request("POST", `/sessions/${sessionId}/query`, { q, backend });
  }

  whatif(sessionId: string, inputRef: string, edit: EditPayload, bindAs?: string):
      Promise<{ input_ref: string }> {
    return this.request("POST", `/sessions/${sessionId}/whatif`, {
      input_ref: inputRef,
      edit,
      bind_as: bindAs,
    });
  }

  history(sessionId: string): Promise<{ entries: HistoryEntry[] }> {
    return this.request("GET", `/sessions/${sessionId}/history`);
  }

  spectral(modelRef: string, datasetRef: string, classIndex: number, k = 1.5):
      Promise<SpectralReportPayload> {
    return this.request("POST", "/analysis/spectral", {
      model_ref: modelRef,
      dataset_ref: datasetRef,
      class_index: classIndex,
      k,
    });
  }
}
