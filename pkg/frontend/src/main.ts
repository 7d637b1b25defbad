import { Api, DEFAULT_K, type ClassLabel } from "./api.js";
import { CLASS_KEYS, classForKey } from "./keymap.js";
import { renderBanner, renderGallery, renderProgress } from "./render.js";
import { GalleryStore } from "./state.js";

// Entry point: build the static page skeleton, wire the keyboard, and keep
// the DOM in step with the store. Everything flows through the HTTP API of
// the annotation service that serves this page.

function option(value: string, text: string): HTMLOptionElement {
  const el = document.createElement("option");
  el.value = value;
  el.textContent = text;
  return el;
}

/** A booted UI: the store driving it plus a teardown hook. */
export interface App {
  store: GalleryStore;
  dispose(): void;
}

export function boot(root: HTMLElement, api: Api = new Api()): App {
  const store = new GalleryStore(api);
  const keyScope = new AbortController();

  const toolbar = document.createElement("div");
  toolbar.className = "toolbar";

  const queryInput = document.createElement("input");
  queryInput.placeholder = "aggregate id";
  queryInput.setAttribute("list", "aggregate-ids");
  const idList = document.createElement("datalist");
  idList.id = "aggregate-ids";
  const loadBtn = document.createElement("button");
  loadBtn.textContent = "load neighbors";
  loadBtn.addEventListener("click", () => {
    if (queryInput.value) void store.loadNeighbors(queryInput.value, DEFAULT_K);
  });

  const filterBtn = document.createElement("button");
  filterBtn.textContent = "unlabeled only (u)";
  filterBtn.addEventListener("click", () => store.toggleUnlabeledOnly());

  const refreshBtn = document.createElement("button");
  refreshBtn.textContent = "refresh (r)";
  refreshBtn.addEventListener("click", () => void store.refresh());

  // Bulk labeling stays behind an explicit confirm: one keystroke labels one
  // patch, the dropdown labels everything currently visible.
  const bulkSelect = document.createElement("select");
  for (const [key, label] of CLASS_KEYS) bulkSelect.appendChild(option(label, `${key} ${label}`));
  const bulkBtn = document.createElement("button");
  bulkBtn.textContent = "label all visible";
  bulkBtn.addEventListener("click", () => {
    const label = bulkSelect.value as ClassLabel;
    const n = store.visibleIndexes().length;
    if (n > 0 && window.confirm(`Label all ${n} visible patches as ${label}?`)) {
      void store.labelVisible(label);
    }
  });

  const exportBtn = document.createElement("button");
  exportBtn.textContent = "export";
  exportBtn.addEventListener("click", () => {
    void api.exportDataset({ format: "jsonl" }).then((text) => {
      const url = URL.createObjectURL(new Blob([text], { type: "application/x-ndjson" }));
      const a = document.createElement("a");
      a.href = url;
      a.download = "dataset.jsonl";
      a.click();
      URL.revokeObjectURL(url);
    });
  });

  toolbar.append(queryInput, idList, loadBtn, filterBtn, refreshBtn, bulkSelect, bulkBtn, exportBtn);

  const banner = document.createElement("div");
  banner.className = "banner-slot";
  const progress = document.createElement("div");
  progress.className = "progress";
  const gallery = document.createElement("div");
  gallery.className = "gallery";

  root.append(toolbar, banner, progress, gallery);

  store.subscribe(() => {
    renderGallery(gallery, store);
    renderBanner(banner, store);
    renderProgress(progress, store);
  });

  const onKeydown = (ev: KeyboardEvent) => {
    const target = ev.target as HTMLElement | null;
    if (target && /^(input|textarea|select)$/i.test(target.tagName ?? "")) return;
    if (classForKey(ev.key) !== null) {
      void store.labelSelected(ev.key);
    } else if (ev.key === "ArrowRight") {
      store.moveCursor(1);
    } else if (ev.key === "ArrowLeft") {
      store.moveCursor(-1);
    } else if (ev.key === "ArrowDown") {
      store.moveCursor(8);
    } else if (ev.key === "ArrowUp") {
      store.moveCursor(-8);
    } else if (ev.key === "u") {
      store.toggleUnlabeledOnly();
    } else if (ev.key === "r") {
      void store.refresh();
    } else if (ev.key === "q") {
      // make the selected patch the new query
      const st = store.getState();
      const sel = st.neighbors[st.cursor];
      if (sel) {
        queryInput.value = sel.id;
        void store.loadNeighbors(sel.id, DEFAULT_K);
      }
    } else if (ev.key === "Escape") {
      store.dismissBanner();
    } else {
      return;
    }
    ev.preventDefault();
  };
  document.addEventListener("keydown", onKeydown, { signal: keyScope.signal });

  // seed the id picker and the progress bar; neither failure is fatal here
  void store.loadProgress();
  void api
    .listAggregates({ size: 500 })
    .then((page) => {
      for (const item of page.items) {
        idList.appendChild(option(item.aggregate_id, item.aggregate_id));
      }
    })
    .catch(() => undefined);

  return { store, dispose: () => keyScope.abort() };
}

if (typeof document !== "undefined" && document.getElementById("app") !== null) {
  boot(document.getElementById("app")!);
}
