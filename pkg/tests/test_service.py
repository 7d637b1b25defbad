"""HTTP service contract: listing, patches, queries, writes, export."""

import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from synseg.annotations import AnnotationStore
from synseg.imaging import save_rgb_png
from synseg.pipeline import AggregateRecord
from synseg.retrieval import EmbeddingIndex
from synseg.service import build_app, create_app
from synseg.spt import write_tensor

N_AGGREGATES = 12


def _record(i, wsi="w1"):
    return AggregateRecord(
        aggregate_id=f"{wsi}_agg{i:03d}",
        wsi_id=wsi,
        centroid=(float(10 * i), 5.0),
        area=120 + i,
        feret=40.0,
        bbox=(0, 0, 20, 10),
        component_count=1,
        patch_ref=f"{wsi}_agg{i:03d}.png",
    )


@pytest.fixture()
def client(tmp_path):
    records = [_record(i) for i in range(N_AGGREGATES)]
    rng = np.random.default_rng(5)
    vectors = rng.normal(size=(N_AGGREGATES, 8))
    index = EmbeddingIndex.from_raw(vectors, [r.aggregate_id for r in records])
    patches = tmp_path / "patches"
    patches.mkdir()
    for rec in records[:3]:  # only some patches exist on disk
        save_rgb_png(
            patches / rec.patch_ref,
            np.full((16, 16, 3), 200, dtype=np.uint8),
        )
    store = AnnotationStore(tmp_path / "labels.jsonl")
    app = create_app(records, index, patches, store)
    return TestClient(app)


class TestClasses:
    def test_six_classes_with_keys(self, client):
        body = client.get("/api/classes").json()
        assert [c["key"] for c in body] == [1, 2, 3, 4, 5, 6]
        assert body[0]["label"] == "LewyBody"
        assert body[5]["label"] == "StainingArtifact"


class TestAggregates:
    def test_paging(self, client):
        page0 = client.get("/api/aggregates", params={"size": 5}).json()
        assert page0["total"] == N_AGGREGATES
        assert len(page0["items"]) == 5
        page2 = client.get("/api/aggregates", params={"size": 5, "page": 2}).json()
        assert len(page2["items"]) == 2
        ids = {r["aggregate_id"] for r in page0["items"]}
        assert ids.isdisjoint(r["aggregate_id"] for r in page2["items"])

    def test_items_carry_patch_urls_and_labels(self, client):
        client.post(
            "/api/annotations",
            json={"aggregate_id": "w1_agg001", "label": "Axon"},
        )
        items = client.get("/api/aggregates").json()["items"]
        by_id = {r["aggregate_id"]: r for r in items}
        assert by_id["w1_agg001"]["label"] == "Axon"
        assert by_id["w1_agg000"]["label"] is None
        assert by_id["w1_agg000"]["patch_url"] == "/api/aggregates/w1_agg000/patch"

    def test_label_filters(self, client):
        client.post(
            "/api/annotations",
            json={"aggregate_id": "w1_agg002", "label": "Dendrite"},
        )
        labeled = client.get("/api/aggregates", params={"filter": "labeled"}).json()
        unlabeled = client.get("/api/aggregates", params={"filter": "unlabeled"}).json()
        assert labeled["total"] == 1
        assert labeled["items"][0]["aggregate_id"] == "w1_agg002"
        assert unlabeled["total"] == N_AGGREGATES - 1

    def test_wsi_filter(self, client):
        body = client.get("/api/aggregates", params={"wsi": "nope"}).json()
        assert body["total"] == 0

    def test_parameter_validation(self, client):
        assert client.get("/api/aggregates", params={"page": -1}).status_code == 400
        assert client.get("/api/aggregates", params={"size": 0}).status_code == 400
        assert client.get("/api/aggregates", params={"size": 501}).status_code == 400
        assert (
            client.get("/api/aggregates", params={"filter": "starred"}).status_code
            == 400
        )


class TestPatch:
    def test_serves_png(self, client):
        resp = client.get("/api/aggregates/w1_agg000/patch")
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/png"
        assert resp.content[:4] == b"\x89PNG"

    def test_missing_file_and_unknown_id(self, client):
        assert client.get("/api/aggregates/w1_agg011/patch").status_code == 404
        assert client.get("/api/aggregates/ghost/patch").status_code == 404


class TestQuery:
    def test_neighbors_of_self_rank_first(self, client):
        body = client.post(
            "/api/query", json={"aggregate_id": "w1_agg003", "k": 5}
        ).json()
        assert body["query"] == "w1_agg003"
        results = body["results"]
        assert len(results) == 5
        assert results[0]["id"] == "w1_agg003"
        assert results[0]["similarity"] == pytest.approx(1.0)
        assert [r["rank"] for r in results] == [1, 2, 3, 4, 5]
        sims = [r["similarity"] for r in results]
        assert sims == sorted(sims, reverse=True)

    def test_results_carry_labels(self, client):
        client.post(
            "/api/annotations",
            json={"aggregate_id": "w1_agg004", "label": "LewyBody"},
        )
        body = client.post(
            "/api/query", json={"aggregate_id": "w1_agg004", "k": 1}
        ).json()
        assert body["results"][0]["label"] == "LewyBody"

    def test_unknown_id_is_404_bad_k_is_400(self, client):
        assert (
            client.post("/api/query", json={"aggregate_id": "ghost"}).status_code == 404
        )
        assert (
            client.post(
                "/api/query", json={"aggregate_id": "w1_agg000", "k": 0}
            ).status_code
            == 400
        )

    def test_no_index_is_503(self, tmp_path):
        records = [_record(0)]
        app = create_app(records, None, tmp_path, AnnotationStore())
        resp = TestClient(app).post("/api/query", json={"aggregate_id": "w1_agg000"})
        assert resp.status_code == 503


class TestAnnotate:
    def test_write_is_persisted_and_superseded(self, client):
        first = client.post(
            "/api/annotations",
            json={"aggregate_id": "w1_agg005", "label": "Axon", "annotator": "alice"},
        )
        assert first.status_code == 200
        assert first.json()["label"] == "Axon"
        second = client.post(
            "/api/annotations",
            json={"aggregate_id": "w1_agg005", "label": "Dendrite", "annotator": "alice"},
        ).json()
        assert second["label"] == "Dendrite"
        items = client.get("/api/aggregates").json()["items"]
        by_id = {r["aggregate_id"]: r for r in items}
        assert by_id["w1_agg005"]["label"] == "Dendrite"

    def test_unknown_label_is_422(self, client):
        resp = client.post(
            "/api/annotations",
            json={"aggregate_id": "w1_agg000", "label": "Mitochondria"},
        )
        assert resp.status_code == 422

    def test_unknown_aggregate_is_404(self, client):
        resp = client.post(
            "/api/annotations", json={"aggregate_id": "ghost", "label": "Axon"}
        )
        assert resp.status_code == 404


class TestProgressAndExport:
    def test_progress_counts(self, client):
        client.post(
            "/api/annotations", json={"aggregate_id": "w1_agg006", "label": "Axon"}
        )
        client.post(
            "/api/annotations", json={"aggregate_id": "w1_agg007", "label": "Axon"}
        )
        body = client.get("/api/progress").json()
        assert body["total"] == N_AGGREGATES
        assert body["labeled"] == 2
        assert body["unlabeled"] == N_AGGREGATES - 2
        assert body["by_class"]["Axon"] == 2

    def test_export_jsonl_with_patch_refs(self, client):
        for i in range(4):
            client.post(
                "/api/annotations",
                json={"aggregate_id": f"w1_agg{i:03d}", "label": "LewyBody"},
            )
        resp = client.get("/api/export", params={"seed": 3})
        assert resp.status_code == 200
        assert resp.headers["content-type"].startswith("application/x-ndjson")
        lines = resp.text.strip().splitlines()
        summary = json.loads(lines[0])["summary"]
        assert summary["total"] == 4
        rows = [json.loads(line) for line in lines[1:]]
        assert all(r["patch_ref"] == r["aggregate_id"] + ".png" for r in rows)

    def test_export_is_deterministic_per_seed(self, client):
        for i in range(6):
            client.post(
                "/api/annotations",
                json={"aggregate_id": f"w1_agg{i:03d}", "label": "Axon"},
            )
        a = client.get("/api/export", params={"seed": 9}).text
        b = client.get("/api/export", params={"seed": 9}).text
        assert a == b

    def test_export_validation_maps_to_400(self, client):
        assert client.get("/api/export", params={"format": "xml"}).status_code == 400
        assert (
            client.get("/api/export", params={"val_fraction": 2.0}).status_code == 400
        )


class TestBuildApp:
    def test_builds_from_disk_artifacts(self, tmp_path):
        from synseg.pipeline import write_manifest
        from synseg.retrieval import save_index

        records = [_record(i) for i in range(3)]
        write_manifest(records, tmp_path / "aggregates.jsonl")
        rng = np.random.default_rng(0)
        index = EmbeddingIndex.from_raw(
            rng.normal(size=(3, 4)), [r.aggregate_id for r in records]
        )
        save_index(index, tmp_path / "index.spt")
        (tmp_path / "patches").mkdir()
        app = build_app(
            tmp_path / "aggregates.jsonl",
            tmp_path / "index.spt",
            tmp_path / "patches",
            tmp_path / "labels.jsonl",
        )
        client = TestClient(app)
        assert client.get("/api/aggregates").json()["total"] == 3
        body = client.post("/api/query", json={"aggregate_id": "w1_agg001", "k": 2})
        assert body.status_code == 200
        assert body.json()["results"][0]["id"] == "w1_agg001"
        # annotations flow through to the on-disk log
        client.post(
            "/api/annotations", json={"aggregate_id": "w1_agg000", "label": "Axon"}
        )
        assert (tmp_path / "labels.jsonl").read_text().count("\n") == 1
