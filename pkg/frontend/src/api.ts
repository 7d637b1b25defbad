// Typed client for the aggregate annotation service (HTTP + JSON).
// Every call goes through the service API; the UI owns no files of its own.

/** The six aggregate classes, in the server's declared order. */
export type ClassLabel =
  | "LewyBody"
  | "Axon"
  | "Dendrite"
  | "UndifferentiatedNeurite"
  | "MultipleLewyBodies"
  | "StainingArtifact";

/** One row of GET /api/classes: numeric shortcut key plus class name. */
export interface ClassEntry {
  key: number;
  label: ClassLabel;
}

/** Aggregate row as returned by the listing endpoint. */
export interface AggregateSummary {
  aggregate_id: string;
  wsi_id: string;
  centroid: [number, number];
  area: number;
  feret: number;
  bbox: [number, number, number, number];
  component_count: number;
  patch_ref: string;
  label: ClassLabel | null;
  mask_rating: string | null;
  patch_url: string;
}

export interface AggregatePage {
  total: number;
  page: number;
  size: number;
  items: AggregateSummary[];
}

/** One nearest-neighbor hit from POST /api/query. */
export interface Neighbor {
  id: string;
  similarity: number;
  rank: number;
  patch_url: string;
  label: ClassLabel | null;
}

export interface QueryResponse {
  query: string;
  k: number;
  results: Neighbor[];
}

/** Annotation record echoed back by POST /api/annotations. */
export interface AnnotationRecord {
  aggregate_id: string;
  label: ClassLabel;
  annotator: string;
  timestamp: string;
  superseded: boolean;
}

export interface Progress {
  total: number;
  labeled: number;
  unlabeled: number;
  by_class: Record<string, number>;
}

/** Server-side default neighborhood size for a query. */
export const DEFAULT_K = 250;

/** Annotator name recorded with every submission from this session. */
export const DEFAULT_ANNOTATOR = "expert";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** HTTP failure; status 0 means the request never reached the server. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(status === 0 ? detail : `HTTP ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

export interface ListOptions {
  page?: number;
  size?: number;
  filter?: "all" | "labeled" | "unlabeled";
  wsi?: string;
}

export interface ExportOptions {
  format?: "jsonl" | "csv";
  seed?: number;
  valFraction?: number;
  annotator?: string;
}

export class Api {
  constructor(
    private baseUrl: string = "",
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  /** Patch image URL for an aggregate (used directly as <img src>). */
  patchUrl(aggregateId: string): string {
    return `${this.baseUrl}/api/aggregates/${encodeURIComponent(aggregateId)}/patch`;
  }

  getClasses(): Promise<ClassEntry[]> {
    return this.requestJson("/api/classes");
  }

  listAggregates(opts: ListOptions = {}): Promise<AggregatePage> {
    const params = new URLSearchParams();
    if (opts.page !== undefined) params.set("page", String(opts.page));
    if (opts.size !== undefined) params.set("size", String(opts.size));
    if (opts.filter !== undefined) params.set("filter", opts.filter);
    if (opts.wsi !== undefined) params.set("wsi", opts.wsi);
    const qs = params.toString();
    return this.requestJson(`/api/aggregates${qs ? "?" + qs : ""}`);
  }

  queryNeighbors(aggregateId: string, k: number = DEFAULT_K): Promise<QueryResponse> {
    return this.requestJson("/api/query", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ aggregate_id: aggregateId, k }),
    });
  }

  submitAnnotation(
    aggregateId: string,
    label: ClassLabel,
    annotator: string = DEFAULT_ANNOTATOR,
  ): Promise<AnnotationRecord> {
    return this.requestJson("/api/annotations", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ aggregate_id: aggregateId, label, annotator }),
    });
  }

  getProgress(): Promise<Progress> {
    return this.requestJson("/api/progress");
  }

  /** Fetch the train/val export as raw text (ndjson or csv). */
  async exportDataset(opts: ExportOptions = {}): Promise<string> {
    const params = new URLSearchParams();
    if (opts.format !== undefined) params.set("format", opts.format);
    if (opts.seed !== undefined) params.set("seed", String(opts.seed));
    if (opts.valFraction !== undefined) params.set("val_fraction", String(opts.valFraction));
    if (opts.annotator !== undefined) params.set("annotator", opts.annotator);
    const qs = params.toString();
    const resp = await this.raw(`/api/export${qs ? "?" + qs : ""}`);
    return resp.text();
  }

  private async raw(path: string, init?: RequestInit): Promise<Response> {
    let resp: Response;
    try {
      resp = await this.fetchFn(this.baseUrl + path, init);
    } catch (err) {
      throw new ApiError(0, err instanceof Error ? err.message : String(err));
    }
    if (!resp.ok) {
      throw new ApiError(resp.status, await errorDetail(resp));
    }
    return resp;
  }

  private async requestJson<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.raw(path, init);
    return (await resp.json()) as T;
  }
}

async function errorDetail(resp: Response): Promise<string> {
  try {
    const body = (await resp.json()) as { detail?: unknown };
    if (body && body.detail !== undefined) {
      return typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail);
    }
  } catch {
    // non-JSON error body; fall through to the status line
  }
  return resp.statusText || `status ${resp.status}`;
}
