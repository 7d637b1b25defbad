import {
  Api,
  ApiError,
  DEFAULT_ANNOTATOR,
  DEFAULT_K,
  type ClassLabel,
  type Progress,
} from "./api.js";
import { classForKey } from "./keymap.js";

/** One gallery cell: a neighbor of the current query. */
export interface GalleryNeighbor {
  id: string;
  similarity: number;
  rank: number;
  patchUrl: string;
  label: ClassLabel | null;
}

export interface Banner {
  kind: "error" | "info";
  text: string;
}

/**
 * Session state for the retrieval-and-label loop. Labels held here are a
 * mirror of the server's active records: optimistic writes are rolled back
 * when the server rejects them, and refresh() re-reads everything.
 */
export interface GalleryState {
  queryId: string | null;
  k: number;
  neighbors: GalleryNeighbor[];
  /** Index into neighbors; -1 when the gallery is empty. */
  cursor: number;
  /** When set, cells that already carry a label are hidden. */
  unlabeledOnly: boolean;
  progress: Progress | null;
  banner: Banner | null;
}

type Listener = () => void;

export class GalleryStore {
  private state: GalleryState = {
    queryId: null,
    k: DEFAULT_K,
    neighbors: [],
    cursor: -1,
    unlabeledOnly: false,
    progress: null,
    banner: null,
  };
  private listeners: Listener[] = [];

  constructor(
    private api: Api,
    private annotator: string = DEFAULT_ANNOTATOR,
  ) {}

  getState(): Readonly<GalleryState> {
    return this.state;
  }

  subscribe(fn: Listener): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== fn);
    };
  }

  private emit(): void {
    for (const fn of this.listeners) fn();
  }

  /**
   * Run a neighbor query and replace the gallery. On failure the previous
   * gallery stays intact and the error appears as a dismissible banner.
   */
  async loadNeighbors(queryId: string, k: number = DEFAULT_K): Promise<void> {
    try {
      const resp = await this.api.queryNeighbors(queryId, k);
      this.state.queryId = resp.query;
      this.state.k = k;
      this.state.neighbors = resp.results.map((r) => ({
        id: r.id,
        similarity: r.similarity,
        rank: r.rank,
        patchUrl: r.patch_url,
        label: r.label,
      }));
      this.state.cursor = this.state.neighbors.length > 0 ? 0 : -1;
      this.state.banner = null;
    } catch (err) {
      this.state.banner = { kind: "error", text: describe(err) };
    }
    this.emit();
  }

  /** Re-read neighbors and progress so displayed labels match the server. */
  async refresh(): Promise<void> {
    await this.loadProgress();
    const { queryId, k, cursor } = this.state;
    if (queryId === null) return;
    try {
      const resp = await this.api.queryNeighbors(queryId, k);
      this.state.neighbors = resp.results.map((r) => ({
        id: r.id,
        similarity: r.similarity,
        rank: r.rank,
        patchUrl: r.patch_url,
        label: r.label,
      }));
      this.state.cursor = clampCursor(cursor, this.state.neighbors.length);
    } catch (err) {
      this.state.banner = { kind: "error", text: describe(err) };
    }
    this.emit();
  }

  async loadProgress(): Promise<void> {
    try {
      this.state.progress = await this.api.getProgress();
    } catch (err) {
      this.state.banner = { kind: "error", text: describe(err) };
    }
    this.emit();
  }

  /**
   * Label the selected patch via its digit key. The badge updates
   * immediately and the cursor advances to the next unlabeled patch; if the
   * server rejects the write, the badge reverts and a banner explains why.
   */
  async labelSelected(key: string): Promise<void> {
    const label = classForKey(key);
    if (label === null) return;
    const target = this.state.neighbors[this.state.cursor];
    if (target === undefined) return;
    const previous = target.label;
    target.label = label;
    this.advanceCursor();
    this.emit();
    try {
      await this.api.submitAnnotation(target.id, label, this.annotator);
      this.adjustProgress(previous, label);
    } catch (err) {
      if (target.label === label) target.label = previous;
      this.state.banner = { kind: "error", text: `label rejected: ${describe(err)}` };
    }
    this.emit();
  }

  /**
   * Bulk action: apply one class to every currently visible patch. The
   * caller is responsible for confirming with the user first.
   */
  async labelVisible(label: ClassLabel): Promise<void> {
    const targets = this.visibleIndexes().map((i) => this.state.neighbors[i]!);
    if (targets.length === 0) return;
    const previous = targets.map((t) => t.label);
    for (const t of targets) t.label = label;
    this.emit();
    const outcomes = await Promise.allSettled(
      targets.map((t) => this.api.submitAnnotation(t.id, label, this.annotator)),
    );
    let failures = 0;
    outcomes.forEach((outcome, i) => {
      if (outcome.status === "rejected") {
        failures += 1;
        const t = targets[i]!;
        if (t.label === label) t.label = previous[i]!;
      }
    });
    if (failures > 0) {
      this.state.banner = {
        kind: "error",
        text: `${failures} of ${targets.length} labels rejected`,
      };
    }
    await this.loadProgress();
  }

  /** Indexes of neighbors shown under the current filter. */
  visibleIndexes(): number[] {
    const out: number[] = [];
    this.state.neighbors.forEach((n, i) => {
      if (!this.state.unlabeledOnly || n.label === null) out.push(i);
    });
    return out;
  }

  /** Move the selection by delta visible cells, clamped at the ends. */
  moveCursor(delta: number): void {
    const visible = this.visibleIndexes();
    if (visible.length === 0) return;
    const pos = visible.indexOf(this.state.cursor);
    const next =
      pos === -1
        ? visible[0]!
        : visible[Math.max(0, Math.min(visible.length - 1, pos + delta))]!;
    this.state.cursor = next;
    this.emit();
  }

  select(index: number): void {
    if (index < 0 || index >= this.state.neighbors.length) return;
    this.state.cursor = index;
    this.emit();
  }

  toggleUnlabeledOnly(): void {
    this.state.unlabeledOnly = !this.state.unlabeledOnly;
    this.emit();
  }

  dismissBanner(): void {
    this.state.banner = null;
    this.emit();
  }

  /** After labeling, jump to the next unlabeled patch (wrapping around). */
  private advanceCursor(): void {
    const n = this.state.neighbors.length;
    for (let step = 1; step <= n; step++) {
      const i = (this.state.cursor + step) % n;
      if (this.state.neighbors[i]!.label === null) {
        this.state.cursor = i;
        return;
      }
    }
    // everything labeled: leave the cursor where it is
  }

  /** Keep the session's progress counters in step with a confirmed write. */
  private adjustProgress(previous: ClassLabel | null, label: ClassLabel): void {
    const p = this.state.progress;
    if (p === null) return;
    if (previous === null) {
      p.labeled += 1;
      p.unlabeled -= 1;
    } else {
      p.by_class[previous] = (p.by_class[previous] ?? 1) - 1;
    }
    p.by_class[label] = (p.by_class[label] ?? 0) + 1;
  }
}

function clampCursor(cursor: number, length: number): number {
  if (length === 0) return -1;
  return Math.max(0, Math.min(length - 1, cursor));
}

function describe(err: unknown): string {
  if (err instanceof ApiError) return err.message;
  return err instanceof Error ? err.message : String(err);
}
