"""Per-tile segmentation pipeline: stains + attention in, instances out.

Stage order is fixed: stain decomposition, attention map, CRF
refinement, evidence combination, small-object removal, component
labeling, distance association, Feret filtering, then record and patch
extraction. Each stage failure is re-raised as a StageError naming the
stage; a tile without enough tissue to fit a stain basis is not an
error and yields zero records.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .attention import (
    AttentionTensor,
    TileScoreManifest,
    attention_to_map,
    class_attention,
    select_positive_tiles,
    threshold_attention,
)
from .crf import CrfParams, meanfield_exact, meanfield_fast, unary_from_probability
from .errors import InsufficientTissue, MissingTile, StageError
from .geometry import feret_diameter
from .imaging import (
    BinaryMask,
    InstanceMask,
    Patch,
    ProbabilityMap,
    Tile,
    rgb_to_od,
    save_label_png,
    save_rgb_png,
)
from .instances import (
    associate_components,
    combine_masks,
    filter_feret,
    label_components,
    remove_small,
)
from .spt import read_tensor
from .stain import StainBasis, alkaline_probability, snmf_decompose, threshold_alkaline
from .tiles import TileStore, crop_patch

DEFAULT_TAU = 0.1
PATCH_SIZE = 256
MASK_RATINGS = ("Good", "Medium", "Bad")


@dataclass
class PipelineThresholds:
    """Post-processing thresholds, all in pixel units."""

    t_s: float = 100.0  # minimum component area, square pixels
    t_d: float = 20.0  # association distance
    t_f: float = 33.0  # minimum Feret diameter

    def __post_init__(self):
        if min(self.t_s, self.t_d, self.t_f) < 0:
            raise ValueError("thresholds must be >= 0")

    @classmethod
    def from_json(cls, text: str) -> "PipelineThresholds":
        return cls(**json.loads(text))


@dataclass
class StainOptions:
    """Knobs forwarded to the stain decomposition stage."""

    lam: float = 0.1
    beta: float = 0.15
    min_foreground: int = 100
    seed: int = 42
    percentile: float = 99.0
    conc_floor: float = 0.05
    basis: StainBasis | None = None


@dataclass
class AggregateRecord:
    """One segmented aggregate, in whole-slide coordinates."""

    aggregate_id: str
    wsi_id: str
    centroid: tuple[float, float]  # (x, y)
    area: int
    feret: float
    bbox: tuple[int, int, int, int]  # (x0, y0, x1, y1), exclusive stop
    component_count: int
    patch_ref: str
    label: str | None = None
    mask_rating: str | None = None

    def __post_init__(self):
        if self.area < 1:
            raise ValueError("area must be >= 1 pixel")
        if self.feret < 0:
            raise ValueError("feret must be >= 0")
        if self.component_count < 1:
            raise ValueError("component_count must be >= 1")
        if self.mask_rating is not None and self.mask_rating not in MASK_RATINGS:
            raise ValueError(f"mask_rating must be one of {MASK_RATINGS}")
        self.centroid = (float(self.centroid[0]), float(self.centroid[1]))
        self.bbox = tuple(int(v) for v in self.bbox)

    def to_json(self) -> dict:
        return {
            "aggregate_id": self.aggregate_id,
            "wsi_id": self.wsi_id,
            "centroid": list(self.centroid),
            "area": self.area,
            "feret": self.feret,
            "bbox": list(self.bbox),
            "component_count": self.component_count,
            "patch_ref": self.patch_ref,
            "label": self.label,
            "mask_rating": self.mask_rating,
        }

    @classmethod
    def from_json(cls, data: dict) -> "AggregateRecord":
        return cls(
            aggregate_id=data["aggregate_id"],
            wsi_id=data["wsi_id"],
            centroid=tuple(data["centroid"]),
            area=int(data["area"]),
            feret=float(data["feret"]),
            bbox=tuple(data["bbox"]),
            component_count=int(data["component_count"]),
            patch_ref=data["patch_ref"],
            label=data.get("label"),
            mask_rating=data.get("mask_rating"),
        )


def write_manifest(records: list[AggregateRecord], path: str | Path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json()) + "\n")


def read_manifest(path: str | Path) -> list[AggregateRecord]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(AggregateRecord.from_json(json.loads(line)))
    return records


def load_attention_tensor(path: str | Path, layer: str = "last") -> AttentionTensor:
    """Read an attention tensor (heads x tokens x tokens) from an SPT file."""
    arr = read_tensor(path)
    if arr.ndim != 3:
        raise StageError("attention", ValueError(f"tensor in {path} is not 3-D"))
    side = math.isqrt(arr.shape[1] - 1)
    tensor = AttentionTensor(a=arr, grid_side=side, layer=layer)
    tensor.validate()
    return tensor


def _crop_within_tile(tile: Tile, cy: int, cx: int, size: int = PATCH_SIZE) -> Patch:
    """Size x size crop from one tile; margins reflected at the borders."""
    h, w = tile.shape
    half = size // 2
    y0, x0 = cy - half, cx - half
    y1, x1 = y0 + size, x0 + size
    iy0, ix0 = max(y0, 0), max(x0, 0)
    iy1, ix1 = min(y1, h), min(x1, w)
    region = tile.pixels[iy0:iy1, ix0:ix1]
    pad = ((iy0 - y0, y1 - iy1), (ix0 - x0, x1 - ix1), (0, 0))
    if any(p for pair in pad for p in pair):
        region = np.pad(region, pad, mode="symmetric")
    return Patch(
        pixels=region,
        center_x=tile.origin_x + cx,
        center_y=tile.origin_y + cy,
    )


def _extract_patch(
    tile: Tile,
    store: TileStore | None,
    centroid_xy: tuple[float, float],
    aggregate_id: str,
) -> Patch:
    cx = int(round(centroid_xy[0]))
    cy = int(round(centroid_xy[1]))
    if store is not None and tile.wsi_id:
        try:
            return crop_patch(
                store, tile.wsi_id, (cx, cy), size=PATCH_SIZE, aggregate_id=aggregate_id
            )
        except MissingTile:
            pass  # neighbor tile absent: fall back to the tile itself
    patch = _crop_within_tile(tile, cy - tile.origin_y, cx - tile.origin_x)
    patch.aggregate_id = aggregate_id
    return patch


def _records_from_instances(
    tile: Tile,
    inst: InstanceMask,
    store: TileStore | None,
    patch_dir: Path | None,
) -> list[AggregateRecord]:
    labels = inst.labels
    n = int(labels.max())
    records: list[AggregateRecord] = []
    boxes = ndimage.find_objects(labels)
    prefix = "_".join(p for p in (tile.wsi_id, tile.tile_id) if p) or "tile"
    for lab in range(1, n + 1):
        box = boxes[lab - 1]
        if box is None:
            continue
        rows, cols = np.nonzero(labels[box] == lab)
        rows = rows + box[0].start
        cols = cols + box[1].start
        centroid = (
            tile.origin_x + float(cols.mean()),
            tile.origin_y + float(rows.mean()),
        )
        aggregate_id = f"{prefix}_{lab:03d}"
        patch_ref = f"{aggregate_id}.png"
        record = AggregateRecord(
            aggregate_id=aggregate_id,
            wsi_id=tile.wsi_id,
            centroid=centroid,
            area=int(rows.size),
            feret=feret_diameter(np.stack([rows, cols], axis=1)),
            bbox=(
                tile.origin_x + int(cols.min()),
                tile.origin_y + int(rows.min()),
                tile.origin_x + int(cols.max()) + 1,
                tile.origin_y + int(rows.max()) + 1,
            ),
            component_count=inst.merged_counts.get(lab, 1),
            patch_ref=patch_ref,
        )
        if patch_dir is not None:
            patch = _extract_patch(tile, store, centroid, aggregate_id)
            save_rgb_png(Path(patch_dir) / patch_ref, patch.pixels)
        records.append(record)
    return records


def run_pipeline(
    tile: Tile,
    attn: AttentionTensor,
    thresholds: PipelineThresholds | None = None,
    crf_params: CrfParams | None = None,
    stain: StainOptions | None = None,
    tau: float = DEFAULT_TAU,
    crf_mode: str = "fast",
    patch_dir: str | Path | None = None,
    store: TileStore | None = None,
) -> tuple[InstanceMask, list[AggregateRecord]]:
    """Segment one tile into aggregate instances and records.

    A tile with too little tissue for stain fitting produces an empty
    mask and no records. Any other stage failure raises StageError.
    """
    thresholds = thresholds or PipelineThresholds()
    crf_params = crf_params or CrfParams()
    stain = stain or StainOptions()
    if crf_mode not in ("fast", "exact"):
        raise ValueError("crf_mode must be 'fast' or 'exact'")
    h, w = tile.shape
    empty = InstanceMask(labels=np.zeros((h, w), dtype=np.int32), merged_counts={})

    def run(stage, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except Exception as exc:
            if isinstance(exc, (StageError, InsufficientTissue)):
                raise
            raise StageError(stage, exc) from exc

    try:
        _, maps = run(
            "stain",
            lambda: snmf_decompose(
                rgb_to_od(tile),
                lam=stain.lam,
                seed=stain.seed,
                beta=stain.beta,
                min_foreground=stain.min_foreground,
                basis=stain.basis,
            ),
        )
    except InsufficientTissue:
        return empty, []
    s_alkaline = run(
        "stain",
        lambda: threshold_alkaline(
            alkaline_probability(
                maps, percentile=stain.percentile, conc_floor=stain.conc_floor
            )
        ),
    )

    def attention_stage() -> BinaryMask:
        a_cls = class_attention(attn)
        pmap = attention_to_map(a_cls, attn.grid_side, h, w)
        return threshold_attention(pmap, tau=tau)

    s_attention = run("attention", attention_stage)

    def crf_stage() -> BinaryMask:
        coarse = ProbabilityMap(
            s_attention.bits.astype(np.float64), provenance="attention"
        )
        unary = unary_from_probability(coarse, eps=crf_params.unary_eps)
        if crf_mode == "exact":
            return meanfield_exact(tile, unary, crf_params)
        return meanfield_fast(tile, unary, crf_params)

    s_refined = run("crf", crf_stage)
    s_combined = run("combine", combine_masks, s_refined, s_alkaline)
    s_cleaned = run("remove_small", remove_small, s_combined, thresholds.t_s)
    inst = run("label", label_components, s_cleaned)
    inst = run("associate", associate_components, inst, thresholds.t_d)
    inst = run("filter_feret", filter_feret, inst, thresholds.t_f)
    records = run(
        "records",
        _records_from_instances,
        tile,
        inst,
        store,
        Path(patch_dir) if patch_dir is not None else None,
    )
    return inst, records


def _parse_tile_id(tile_id: str) -> tuple[int, int]:
    gx, gy = tile_id.split("_")
    return int(gx), int(gy)


def segment_tiles(
    store: TileStore,
    wsi_id: str,
    attention_dir: str | Path,
    out_dir: str | Path,
    scores: TileScoreManifest | None = None,
    cutoff: float = 0.5,
    thresholds: PipelineThresholds | None = None,
    crf_params: CrfParams | None = None,
    stain: StainOptions | None = None,
    tau: float = DEFAULT_TAU,
    crf_mode: str = "fast",
    workers: int = 1,
) -> list[AggregateRecord]:
    """Run the pipeline over each positive tile of one WSI.

    Tiles are processed by a thread pool (stages are numpy-bound) but
    results are collected in tile order and the manifest is written by
    this single caller, so output is independent of scheduling.
    """
    attention_dir = Path(attention_dir)
    out_dir = Path(out_dir)
    mask_dir = out_dir / "masks"
    patch_dir = out_dir / "patches"
    mask_dir.mkdir(parents=True, exist_ok=True)
    patch_dir.mkdir(parents=True, exist_ok=True)

    if scores is not None:
        tile_ids = [t for w, t in select_positive_tiles(scores, cutoff) if w == wsi_id]
    else:
        tile_ids = store.tile_ids(wsi_id)

    def one(tile_id: str) -> list[AggregateRecord]:
        gx, gy = _parse_tile_id(tile_id)
        tile = Tile(
            pixels=store.pixels(wsi_id, gx, gy),
            origin_x=gx * store.tile_size,
            origin_y=gy * store.tile_size,
            wsi_id=wsi_id,
            tile_id=tile_id,
        )
        attn = load_attention_tensor(attention_dir / f"{tile_id}.spt")
        inst, records = run_pipeline(
            tile,
            attn,
            thresholds=thresholds,
            crf_params=crf_params,
            stain=stain,
            tau=tau,
            crf_mode=crf_mode,
            patch_dir=patch_dir,
            store=store,
        )
        save_label_png(mask_dir / f"{tile_id}.png", inst.labels)
        return records

    if workers <= 1:
        batches = [one(t) for t in tile_ids]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            batches = list(pool.map(one, tile_ids))

    records = [rec for batch in batches for rec in batch]
    write_manifest(records, out_dir / "aggregates.jsonl")
    return records
