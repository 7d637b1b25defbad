// In-memory stand-in for the annotation service: same routes, same JSON
// shapes, no sockets. Tests inject its handler as the Api fetch function and
// inspect the request log / injected failures.

import type { ClassLabel, FetchLike } from "../src/api.js";

export const ALL_CLASSES: ClassLabel[] = [
  "LewyBody",
  "Axon",
  "Dendrite",
  "UndifferentiatedNeurite",
  "MultipleLewyBodies",
  "StainingArtifact",
];

export interface LoggedRequest {
  method: string;
  path: string;
  body: unknown;
}

export interface FixtureAnnotation {
  aggregate_id: string;
  label: ClassLabel;
  annotator: string;
  timestamp: string;
  superseded: boolean;
}

interface InjectedFailure {
  status: number;
  detail: string;
  remaining: number;
}

function json(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

export class FixtureService {
  readonly ids: string[];
  readonly requests: LoggedRequest[] = [];
  readonly annotations: FixtureAnnotation[] = [];
  private failure: InjectedFailure | null = null;
  private clock = 0;

  constructor(readonly size = 300) {
    this.ids = Array.from({ length: size }, (_, i) => `w0_0000_0000_${String(i).padStart(3, "0")}`);
  }

  /** Fail the next n annotation POSTs with the given status. */
  failNextAnnotations(status: number, detail: string, n = 1): void {
    this.failure = { status, detail, remaining: n };
  }

  /** Latest label for an aggregate, or null — what the UI must mirror. */
  activeLabel(id: string): ClassLabel | null {
    for (let i = this.annotations.length - 1; i >= 0; i--) {
      if (this.annotations[i]!.aggregate_id === id) return this.annotations[i]!.label;
    }
    return null;
  }

  /** Record a label server-side, as another session would. */
  annotate(id: string, label: ClassLabel, annotator = "expert"): FixtureAnnotation {
    const rec: FixtureAnnotation = {
      aggregate_id: id,
      label,
      annotator,
      timestamp: new Date(Date.UTC(2026, 0, 1, 0, 0, this.clock++)).toISOString(),
      superseded: false,
    };
    this.annotations.push(rec);
    return rec;
  }

  annotationPosts(): LoggedRequest[] {
    return this.requests.filter((r) => r.method === "POST" && r.path === "/api/annotations");
  }

  /** fetch-compatible entry point covering every route the UI uses. */
  handler: FetchLike = async (input, init) => {
    const url = new URL(input, "http://fixture");
    const method = (init?.method ?? "GET").toUpperCase();
    const body = typeof init?.body === "string" ? JSON.parse(init.body) : null;
    this.requests.push({ method, path: url.pathname, body });

    if (method === "GET" && url.pathname === "/api/classes") {
      return json(ALL_CLASSES.map((label, i) => ({ key: i + 1, label })));
    }

    if (method === "GET" && url.pathname === "/api/aggregates") {
      return this.listAggregates(url);
    }

    const patch = url.pathname.match(/^\/api\/aggregates\/([^/]+)\/patch$/);
    if (method === "GET" && patch) {
      const id = decodeURIComponent(patch[1]!);
      if (!this.ids.includes(id)) return json({ detail: `unknown aggregate '${id}'` }, 404);
      return new Response(new Uint8Array([0x89, 0x50, 0x4e, 0x47]), {
        status: 200,
        headers: { "content-type": "image/png" },
      });
    }

    if (method === "POST" && url.pathname === "/api/query") {
      return this.query(body as { aggregate_id: string; k?: number });
    }

    if (method === "POST" && url.pathname === "/api/annotations") {
      return this.postAnnotation(body as { aggregate_id: string; label: string; annotator?: string });
    }

    if (method === "GET" && url.pathname === "/api/progress") {
      const labeled = new Set(this.annotations.map((a) => a.aggregate_id));
      const byClass: Record<string, number> = {};
      for (const id of labeled) byClass[this.activeLabel(id)!] = (byClass[this.activeLabel(id)!] ?? 0) + 1;
      return json({
        total: this.size,
        labeled: labeled.size,
        unlabeled: this.size - labeled.size,
        by_class: byClass,
      });
    }

    if (method === "GET" && url.pathname === "/api/export") {
      const rows = this.ids
        .filter((id) => this.activeLabel(id) !== null)
        .map((id) => JSON.stringify({ aggregate_id: id, label: this.activeLabel(id) }));
      return new Response(rows.join("\n"), {
        status: 200,
        headers: { "content-type": "application/x-ndjson" },
      });
    }

    return json({ detail: `no route ${method} ${url.pathname}` }, 404);
  };

  private listAggregates(url: URL): Response {
    const page = Number(url.searchParams.get("page") ?? "0");
    const size = Number(url.searchParams.get("size") ?? "50");
    const filter = url.searchParams.get("filter") ?? "all";
    if (size < 1 || size > 500) return json({ detail: "size must lie in [1, 500]" }, 400);
    let items = this.ids;
    if (filter !== "all") {
      const want = filter === "labeled";
      items = items.filter((id) => (this.activeLabel(id) !== null) === want);
    }
    const slice = items.slice(page * size, (page + 1) * size);
    return json({
      total: items.length,
      page,
      size,
      items: slice.map((id) => this.record(id)),
    });
  }

  private record(id: string) {
    return {
      aggregate_id: id,
      wsi_id: "w0",
      centroid: [64.0, 64.0],
      area: 200,
      feret: 40.0,
      bbox: [0, 0, 128, 128],
      component_count: 1,
      patch_ref: `${id}.png`,
      label: this.activeLabel(id),
      mask_rating: null,
      patch_url: `/api/aggregates/${id}/patch`,
    };
  }

  private query(body: { aggregate_id: string; k?: number }): Response {
    const qi = this.ids.indexOf(body.aggregate_id);
    if (qi === -1) return json({ detail: `unknown aggregate '${body.aggregate_id}'` }, 404);
    const k = Math.min(body.k ?? 250, this.size);
    const results = Array.from({ length: k }, (_, j) => {
      const id = this.ids[(qi + j) % this.size]!;
      return {
        id,
        similarity: 1 - j * 0.001,
        rank: j + 1,
        patch_url: `/api/aggregates/${id}/patch`,
        label: this.activeLabel(id),
      };
    });
    return json({ query: body.aggregate_id, k: body.k ?? 250, results });
  }

  private postAnnotation(body: { aggregate_id: string; label: string; annotator?: string }): Response {
    if (this.failure !== null && this.failure.remaining > 0) {
      this.failure.remaining -= 1;
      const { status, detail } = this.failure;
      if (this.failure.remaining === 0) this.failure = null;
      return json({ detail }, status);
    }
    if (!this.ids.includes(body.aggregate_id)) {
      return json({ detail: `unknown aggregate '${body.aggregate_id}'` }, 404);
    }
    if (!ALL_CLASSES.includes(body.label as ClassLabel)) {
      return json({ detail: `label must be one of ${ALL_CLASSES.join(", ")}` }, 422);
    }
    return json(this.annotate(body.aggregate_id, body.label as ClassLabel, body.annotator ?? "expert"));
  }
}
