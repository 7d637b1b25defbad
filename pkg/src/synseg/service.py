"""HTTP backend for the annotation workflow.

Read endpoints serve the aggregate manifest, patch images, and nearest
neighbors; writes go through the annotation store under a lock, and the
export endpoint streams the stratified dataset. All state lives in the
manifest, the embedding index, and the append-only annotation log, so
restarting the process loses nothing.
"""

from __future__ import annotations

import threading
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse, PlainTextResponse
from pydantic import BaseModel

from .annotations import (
    CLASS_KEYS,
    VAL_FRACTION,
    AnnotationStore,
    ClassLabel,
    export_dataset,
)
from .pipeline import AggregateRecord, read_manifest
from .retrieval import DEFAULT_K, EmbeddingIndex, knn, load_index

FILTERS = ("all", "labeled", "unlabeled")


class QueryRequest(BaseModel):
    aggregate_id: str
    k: int = DEFAULT_K


class AnnotationRequest(BaseModel):
    aggregate_id: str
    label: str
    annotator: str = "expert"


def create_app(
    records: list[AggregateRecord],
    index: EmbeddingIndex | None,
    patches_dir: str | Path,
    store: AnnotationStore,
) -> FastAPI:
    records = sorted(records, key=lambda r: (r.wsi_id, r.aggregate_id))
    by_id = {r.aggregate_id: r for r in records}
    patches_dir = Path(patches_dir)
    write_lock = threading.Lock()

    app = FastAPI(title="aggregate annotation service")
    app.state.store = store
    app.state.index = index
    app.state.records = records

    def require(aggregate_id: str) -> AggregateRecord:
        rec = by_id.get(aggregate_id)
        if rec is None:
            raise HTTPException(status_code=404, detail=f"unknown aggregate {aggregate_id!r}")
        return rec

    @app.get("/api/classes")
    def classes():
        return [{"key": key, "label": label.value} for key, label in CLASS_KEYS.items()]

    @app.get("/api/aggregates")
    def aggregates(
        page: int = 0, size: int = 50, filter: str = "all", wsi: str | None = None
    ):
        if page < 0:
            raise HTTPException(status_code=400, detail="page must be >= 0")
        if not (1 <= size <= 500):
            raise HTTPException(status_code=400, detail="size must lie in [1, 500]")
        if filter not in FILTERS:
            raise HTTPException(status_code=400, detail=f"filter must be one of {FILTERS}")
        items = records
        if wsi is not None:
            items = [r for r in items if r.wsi_id == wsi]
        if filter != "all":
            labeled = store.labeled_ids()
            want = filter == "labeled"
            items = [r for r in items if (r.aggregate_id in labeled) == want]
        total = len(items)
        page_items = items[page * size : (page + 1) * size]
        out = []
        for rec in page_items:
            body = rec.to_json()
            active = store.active_label(rec.aggregate_id)
            body["label"] = active.value if active else None
            body["patch_url"] = f"/api/aggregates/{rec.aggregate_id}/patch"
            out.append(body)
        return {"total": total, "page": page, "size": size, "items": out}

    @app.get("/api/aggregates/{aggregate_id}/patch")
    def patch(aggregate_id: str):
        rec = require(aggregate_id)
        path = patches_dir / rec.patch_ref
        if not path.is_file():
            raise HTTPException(status_code=404, detail=f"no patch file for {aggregate_id!r}")
        return FileResponse(path, media_type="image/png")

    @app.post("/api/query")
    def query(req: QueryRequest):
        rec = require(req.aggregate_id)
        if index is None or len(index) == 0:
            raise HTTPException(status_code=503, detail="no embedding index loaded")
        if req.k < 1:
            raise HTTPException(status_code=400, detail="k must be >= 1")
        try:
            vector = index.row_of(rec.aggregate_id)
        except KeyError:
            raise HTTPException(
                status_code=404, detail=f"{req.aggregate_id!r} not in the index"
            ) from None
        results = []
        for hit in knn(index, vector, k=req.k):
            active = store.active_label(hit.id)
            results.append(
                {
                    "id": hit.id,
                    "similarity": hit.similarity,
                    "rank": hit.rank,
                    "patch_url": f"/api/aggregates/{hit.id}/patch",
                    "label": active.value if active else None,
                }
            )
        return {"query": req.aggregate_id, "k": req.k, "results": results}

    @app.post("/api/annotations")
    def annotate(req: AnnotationRequest):
        require(req.aggregate_id)
        try:
            label = ClassLabel(req.label)
        except ValueError:
            raise HTTPException(
                status_code=422, detail=f"label must be one of {[c.value for c in ClassLabel]}"
            ) from None
        with write_lock:
            rec = store.submit(req.aggregate_id, label, req.annotator)
        return rec.to_json()

    @app.get("/api/progress")
    def progress():
        labeled = store.labeled_ids()
        return {
            "total": len(records),
            "labeled": len(labeled),
            "unlabeled": len(records) - len(labeled),
            "by_class": store.class_counts(),
        }

    @app.get("/api/export")
    def export(
        format: str = "jsonl",
        seed: int = 42,
        val_fraction: float = VAL_FRACTION,
        annotator: str | None = None,
    ):
        patch_refs = {r.aggregate_id: r.patch_ref for r in records}
        try:
            content = export_dataset(
                store,
                patch_refs,
                fmt=format,
                split_seed=seed,
                val_fraction=val_fraction,
                annotator=annotator,
            )
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        media = "text/csv" if format == "csv" else "application/x-ndjson"
        return PlainTextResponse(content, media_type=media)

    return app


def build_app(
    manifest: str | Path,
    index_path: str | Path | None,
    patches_dir: str | Path,
    log_path: str | Path,
) -> FastAPI:
    """Assemble the app from on-disk artifacts (CLI entry point)."""
    records = read_manifest(manifest)
    index = load_index(index_path) if index_path else None
    store = AnnotationStore(log_path)
    return create_app(records, index, patches_dir, store)
