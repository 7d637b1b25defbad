import { describe, expect, it } from "vitest";

import { Api } from "../src/api.js";
import { GalleryStore } from "../src/state.js";
import { ALL_CLASSES, FixtureService } from "./fixture.js";

function make(size = 300): { fixture: FixtureService; store: GalleryStore } {
  const fixture = new FixtureService(size);
  return { fixture, store: new GalleryStore(new Api("", fixture.handler)) };
}

describe("loadNeighbors", () => {
  it("fills the gallery in rank order with the query first", async () => {
    const { fixture, store } = make();
    await store.loadNeighbors(fixture.ids[5]!);
    const st = store.getState();
    expect(st.queryId).toBe(fixture.ids[5]);
    expect(st.neighbors).toHaveLength(250);
    expect(st.neighbors[0]!.id).toBe(fixture.ids[5]);
    expect(st.neighbors[0]!.similarity).toBeCloseTo(1.0, 9);
    expect(st.neighbors.map((n) => n.rank)).toEqual(
      Array.from({ length: 250 }, (_, i) => i + 1),
    );
    expect(st.cursor).toBe(0);
    expect(st.banner).toBeNull();
  });

  it("keeps the previous gallery when the query fails", async () => {
    const { fixture, store } = make();
    await store.loadNeighbors(fixture.ids[0]!);
    const before = store.getState().neighbors;
    await store.loadNeighbors("missing-id");
    const st = store.getState();
    expect(st.banner?.kind).toBe("error");
    expect(st.banner?.text).toContain("missing-id");
    expect(st.neighbors).toBe(before);
    expect(st.queryId).toBe(fixture.ids[0]);
  });

  it("surfaces transport errors as a banner and preserves state", async () => {
    const store = new GalleryStore(new Api("", () => Promise.reject(new Error("down"))));
    await store.loadNeighbors("anything");
    const st = store.getState();
    expect(st.banner?.kind).toBe("error");
    expect(st.neighbors).toHaveLength(0);
    expect(st.cursor).toBe(-1);
  });
});

describe("labelSelected", () => {
  it("applies the class for the key optimistically, then persists it", async () => {
    const { fixture, store } = make();
    await store.loadNeighbors(fixture.ids[0]!, 10);
    const target = store.getState().neighbors[0]!;
    const pending = store.labelSelected("1");
    // before the server answers: badge already set, cursor moved on
    expect(store.getState().neighbors[0]!.label).toBe("LewyBody");
    expect(store.getState().cursor).toBe(1);
    await pending;
    expect(fixture.activeLabel(target.id)).toBe("LewyBody");
    expect(store.getState().neighbors[0]!.label).toBe("LewyBody");
  });

  it("advances the cursor to the next unlabeled patch, wrapping", async () => {
    const { fixture, store } = make();
    await store.loadNeighbors(fixture.ids[0]!, 4);
    await store.labelSelected("2"); // index 0 -> cursor 1
    await store.labelSelected("2"); // index 1 -> cursor 2
    store.select(3);
    await store.labelSelected("3"); // index 3 -> wraps to 2 (only unlabeled left)
    expect(store.getState().cursor).toBe(2);
    await store.labelSelected("4"); // everything labeled now: cursor stays put
    expect(store.getState().cursor).toBe(2);
  });

  it("rolls the badge back and raises a banner on a server 4xx", async () => {
    const { fixture, store } = make();
    await store.loadNeighbors(fixture.ids[0]!, 10);
    fixture.failNextAnnotations(422, "annotation store rejected the write");
    await store.labelSelected("5");
    const st = store.getState();
    expect(st.neighbors[0]!.label).toBeNull();
    expect(st.banner?.kind).toBe("error");
    expect(st.banner?.text).toContain("rejected");
    expect(fixture.activeLabel(st.neighbors[0]!.id)).toBeNull();
  });

  it("restores the previous class when a relabel is rejected", async () => {
    const { fixture, store } = make();
    await store.loadNeighbors(fixture.ids[0]!, 10);
    await store.labelSelected("1");
    store.select(0);
    fixture.failNextAnnotations(422, "no");
    await store.labelSelected("2");
    expect(store.getState().neighbors[0]!.label).toBe("LewyBody");
    expect(fixture.activeLabel(store.getState().neighbors[0]!.id)).toBe("LewyBody");
  });

  it("ignores keys that are not labeling shortcuts", async () => {
    const { fixture, store } = make();
    await store.loadNeighbors(fixture.ids[0]!, 10);
    await store.labelSelected("x");
    await store.labelSelected("7");
    expect(fixture.annotationPosts()).toHaveLength(0);
    expect(store.getState().neighbors[0]!.label).toBeNull();
  });

  it("does nothing when the gallery is empty", async () => {
    const { fixture, store } = make();
    await store.labelSelected("1");
    expect(fixture.annotationPosts()).toHaveLength(0);
  });

  it("keeps the progress counters in step with confirmed writes", async () => {
    const { fixture, store } = make(20);
    await store.loadProgress();
    await store.loadNeighbors(fixture.ids[0]!, 5);
    await store.labelSelected("1");
    expect(store.getState().progress).toMatchObject({ labeled: 1, unlabeled: 19 });
    store.select(0);
    await store.labelSelected("2"); // relabel: totals unchanged, class moves
    const p = store.getState().progress!;
    expect(p.labeled).toBe(1);
    expect(p.by_class["LewyBody"]).toBe(0);
    expect(p.by_class["Axon"]).toBe(1);
  });
});

describe("cursor and filter", () => {
  it("moves only across visible cells when unlabeled-only is on", async () => {
    const { fixture, store } = make();
    fixture.annotate(fixture.ids[1]!, "Axon");
    fixture.annotate(fixture.ids[2]!, "Axon");
    await store.loadNeighbors(fixture.ids[0]!, 5);
    store.toggleUnlabeledOnly();
    expect(store.visibleIndexes()).toEqual([0, 3, 4]);
    store.moveCursor(1);
    expect(store.getState().cursor).toBe(3);
    store.moveCursor(1);
    expect(store.getState().cursor).toBe(4);
    store.moveCursor(1); // clamped at the end
    expect(store.getState().cursor).toBe(4);
    store.moveCursor(-2);
    expect(store.getState().cursor).toBe(0);
  });

  it("keeps the cursor inside the list", async () => {
    const { fixture, store } = make();
    await store.loadNeighbors(fixture.ids[0]!, 5);
    store.select(99);
    expect(store.getState().cursor).toBe(0);
    store.moveCursor(100);
    expect(store.getState().cursor).toBe(4);
    store.moveCursor(-100);
    expect(store.getState().cursor).toBe(0);
  });
});

describe("labelVisible", () => {
  it("labels every visible patch and reports partial failures", async () => {
    const { fixture, store } = make();
    await store.loadNeighbors(fixture.ids[0]!, 6);
    fixture.failNextAnnotations(422, "no", 2);
    await store.labelVisible("StainingArtifact");
    const st = store.getState();
    // the first two POSTs were rejected and rolled back
    expect(st.neighbors.filter((n) => n.label === "StainingArtifact")).toHaveLength(4);
    expect(st.neighbors.filter((n) => n.label === null)).toHaveLength(2);
    expect(st.banner?.text).toContain("2 of 6");
    for (const n of st.neighbors) {
      expect(n.label).toBe(fixture.activeLabel(n.id));
    }
  });

  it("respects the unlabeled-only filter", async () => {
    const { fixture, store } = make();
    fixture.annotate(fixture.ids[1]!, "Axon");
    await store.loadNeighbors(fixture.ids[0]!, 4);
    store.toggleUnlabeledOnly();
    await store.labelVisible("Dendrite");
    expect(fixture.activeLabel(fixture.ids[1]!)).toBe("Axon");
    expect(fixture.annotationPosts()).toHaveLength(3);
  });
});

describe("refresh equivalence", () => {
  it("mirrors the server after local labels, rejections and outside writes", async () => {
    const { fixture, store } = make();
    await store.loadNeighbors(fixture.ids[0]!, 50);

    // a spread of local labels through the six classes
    for (let i = 0; i < 12; i++) {
      store.select(i);
      await store.labelSelected(String((i % 6) + 1));
    }
    // one rejected write in the middle
    store.select(20);
    fixture.failNextAnnotations(400, "flaky");
    await store.labelSelected("1");
    // and a concurrent session relabeling one of ours
    fixture.annotate(fixture.ids[3]!, "StainingArtifact", "np-2");

    await store.refresh();
    const st = store.getState();
    expect(st.neighbors).toHaveLength(50);
    for (const n of st.neighbors) {
      expect(n.label).toBe(fixture.activeLabel(n.id));
    }
    expect(st.neighbors[3]!.label).toBe("StainingArtifact");
    expect(st.neighbors[20]!.label).toBeNull();
    expect(st.progress!.labeled).toBe(12);
  });

  it("matches a cold reload of the same query", async () => {
    const { fixture, store } = make();
    await store.loadNeighbors(fixture.ids[10]!, 30);
    for (const key of ["1", "2", "3", "4", "5", "6"]) {
      await store.labelSelected(key);
    }
    await store.refresh();

    const fresh = new GalleryStore(new Api("", fixture.handler));
    await fresh.loadNeighbors(fixture.ids[10]!, 30);
    expect(store.getState().neighbors).toEqual(fresh.getState().neighbors);
  });
});

describe("fixture sanity", () => {
  it("exposes all six classes", () => {
    expect(ALL_CLASSES).toHaveLength(6);
  });
});
