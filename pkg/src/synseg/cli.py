"""Command-line entry points.

Each pipeline stage is its own command so stages can be scripted and
inspected independently; ``synseg`` bundles them under one umbrella.
JSON-valued flags accept either an inline JSON string or a path to a
JSON file.
"""

from __future__ import annotations

import json
from pathlib import Path

import click
import numpy as np

from . import __version__
from .annotations import AnnotationStore
from .attention import TileScoreManifest, attention_to_map, class_attention, threshold_attention
from .crf import CrfParams, meanfield_exact, meanfield_fast, unary_from_probability
from .imaging import ProbabilityMap, Tile, load_tile_image, save_mask_png
from .metrics import (
    CountComparison,
    classification_report,
    rating_tally,
    relative_count_difference,
    render_report,
)
from .pipeline import (
    PipelineThresholds,
    StainOptions,
    load_attention_tensor,
    read_manifest,
    segment_tiles,
)
from .retrieval import EmbeddingIndex, build_index, knn, load_index, save_index
from .spt import read_tensor, write_tensor
from .stain import StainBasis, alkaline_probability, snmf_decompose, threshold_alkaline
from .tiles import TileStore


def _json_arg(value: str) -> dict:
    value = value.strip()
    if value.startswith("{"):
        return json.loads(value)
    return json.loads(Path(value).read_text())


def _load_tile(path: str) -> Tile:
    pixels = load_tile_image(path)
    return Tile(pixels=pixels, tile_id=Path(path).stem)


@click.command("stain-decompose")
@click.option("--tile", "tile_path", required=True, type=click.Path(exists=True))
@click.option("--lambda", "lam", default=0.1, show_default=True, help="L1 sparsity weight.")
@click.option("--seed", default=42, show_default=True)
@click.option("--basis", "basis_path", type=click.Path(exists=True), default=None,
              help="Reuse a fixed stain basis instead of fitting one.")
@click.option("--out-basis", type=click.Path(), default=None)
@click.option("--out-conc", type=click.Path(), default=None)
@click.option("--out-mask", type=click.Path(), default=None)
def stain_decompose(tile_path, lam, seed, basis_path, out_basis, out_conc, out_mask):
    """Fit the stain basis of a tile and write its concentration maps."""
    tile = _load_tile(tile_path)
    from .imaging import rgb_to_od

    fixed = StainBasis.load(basis_path) if basis_path else None
    basis, maps = snmf_decompose(rgb_to_od(tile), lam=lam, seed=seed, basis=fixed)
    if out_basis:
        basis.save(out_basis)
    if out_conc:
        write_tensor(out_conc, maps.h.astype(np.float32))
    if out_mask:
        save_mask_png(out_mask, threshold_alkaline(alkaline_probability(maps)))
    info = {k: v for k, v in maps.info.items() if k != "objective"}
    click.echo(json.dumps(info))


@click.command("attention-map")
@click.option("--attn", "attn_path", required=True, type=click.Path(exists=True))
@click.option("--grid", "grid_side", type=int, default=None,
              help="Token grid side; inferred from the tensor when omitted.")
@click.option("--tau", default=0.1, show_default=True)
@click.option("--size", default=1024, show_default=True, help="Output resolution.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--out-prob", type=click.Path(), default=None,
              help="Also write the continuous map as an SPT tensor.")
def attention_map(attn_path, grid_side, tau, size, out_path, out_prob):
    """Turn a class-token attention tensor into a binary seed mask."""
    tensor = load_attention_tensor(attn_path)
    if grid_side is not None and grid_side != tensor.grid_side:
        raise click.ClickException(
            f"tensor implies grid {tensor.grid_side}, --grid says {grid_side}"
        )
    pmap = attention_to_map(class_attention(tensor), tensor.grid_side, size, size)
    if out_prob:
        write_tensor(out_prob, pmap.values.astype(np.float32))
    save_mask_png(out_path, threshold_attention(pmap, tau=tau))


@click.command("crf-refine")
@click.option("--tile", "tile_path", required=True, type=click.Path(exists=True))
@click.option("--prob", "prob_path", required=True, type=click.Path(exists=True),
              help="Foreground probability map (2-D SPT tensor).")
@click.option("--params", "params_json", default=None,
              help="CrfParams as inline JSON or a JSON file path.")
@click.option("--mode", type=click.Choice(["exact", "fast"]), default="fast",
              show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def crf_refine(tile_path, prob_path, params_json, mode, out_path):
    """Refine a probability map against tile colors with the dense CRF."""
    tile = _load_tile(tile_path)
    values = read_tensor(prob_path).astype(np.float64)
    params = CrfParams(**_json_arg(params_json)) if params_json else CrfParams()
    unary = unary_from_probability(ProbabilityMap(values), eps=params.unary_eps)
    refine = meanfield_exact if mode == "exact" else meanfield_fast
    save_mask_png(out_path, refine(tile, unary, params))


@click.command("segment")
@click.option("--wsi", "wsi_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--scores", "scores_path", type=click.Path(exists=True), default=None,
              help="Tile classifier scores CSV; omit to process every tile.")
@click.option("--thresholds", "thresholds_json", default=None,
              help='Post-processing thresholds, e.g. \'{"t_s":100,"t_d":20,"t_f":33}\'.')
@click.option("--crf-params", "crf_json", default=None)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--tau", default=0.1, show_default=True)
@click.option("--cutoff", default=0.5, show_default=True, help="Positive-tile score cutoff.")
@click.option("--crf-mode", type=click.Choice(["exact", "fast"]), default="fast")
@click.option("--tile-size", default=1024, show_default=True)
@click.option("--workers", default=1, show_default=True)
@click.option("--seed", default=42, show_default=True)
def segment(wsi_dir, scores_path, thresholds_json, crf_json, out_dir, tau, cutoff,
            crf_mode, tile_size, workers, seed):
    """Segment the positive tiles of one WSI directory.

    Expects <wsi>/tiles/<gx>_<gy>.png and <wsi>/attention/<tile_id>.spt;
    writes masks/, patches/, and aggregates.jsonl under --out.
    """
    wsi_dir = Path(wsi_dir)
    wsi_id = wsi_dir.name
    tiles_dir = wsi_dir / "tiles" if (wsi_dir / "tiles").is_dir() else wsi_dir
    attention_dir = wsi_dir / "attention"
    if not attention_dir.is_dir():
        raise click.ClickException(f"no attention directory at {attention_dir}")

    store = TileStore.from_directory(tiles_dir, wsi_id, tile_size=tile_size)
    scores = TileScoreManifest.from_csv(scores_path) if scores_path else None
    thresholds = (
        PipelineThresholds(**_json_arg(thresholds_json))
        if thresholds_json
        else PipelineThresholds()
    )
    crf_params = CrfParams(**_json_arg(crf_json)) if crf_json else CrfParams()
    records = segment_tiles(
        store,
        wsi_id,
        attention_dir,
        out_dir,
        scores=scores,
        cutoff=cutoff,
        thresholds=thresholds,
        crf_params=crf_params,
        stain=StainOptions(seed=seed),
        tau=tau,
        crf_mode=crf_mode,
        workers=workers,
    )
    click.echo(f"{len(records)} aggregates -> {Path(out_dir) / 'aggregates.jsonl'}")


@click.group("index")
def index():
    """Build and query the patch-embedding index."""


@index.command("build")
@click.option("--emb", "emb_path", required=True, type=click.Path(exists=True))
@click.option("--ids", "ids_path", required=True, type=click.Path(exists=True))
@click.option("--metric", type=click.Choice(["cosine", "euclidean"]), default="cosine")
@click.option("--out", "out_path", required=True, type=click.Path())
def index_build(emb_path, ids_path, metric, out_path):
    """Index an [M, D] embedding tensor against an id list."""
    idx = build_index(emb_path, ids_path, metric=metric)
    save_index(idx, out_path)
    click.echo(f"indexed {len(idx)} vectors of dim {idx.dim}")


@index.command("query")
@click.option("--idx", "idx_path", required=True, type=click.Path(exists=True))
@click.option("--id", "aggregate_id", required=True)
@click.option("--k", default=250, show_default=True)
@click.option("--json", "as_json", is_flag=True, default=False)
def index_query(idx_path, aggregate_id, k, as_json):
    """Nearest neighbors of a stored aggregate."""
    idx = load_index(idx_path)
    try:
        query = idx.row_of(aggregate_id)
    except KeyError:
        raise click.ClickException(f"id {aggregate_id!r} not in index") from None
    results = knn(idx, query, k=k)
    if as_json:
        click.echo(json.dumps(
            [{"id": r.id, "similarity": r.similarity, "rank": r.rank} for r in results]
        ))
    else:
        for r in results:
            click.echo(f"{r.rank:4d}  {r.similarity:+.4f}  {r.id}")


@click.command("serve")
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--index", "index_path", type=click.Path(exists=True), default=None)
@click.option("--patches", "patches_dir", required=True, type=click.Path(exists=True))
@click.option("--log", "log_path", required=True, type=click.Path())
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8080, show_default=True)
def serve(manifest, index_path, patches_dir, log_path, host, port):
    """Run the annotation HTTP service."""
    import uvicorn

    from .service import build_app

    app = build_app(manifest, index_path, patches_dir, log_path)
    uvicorn.run(app, host=host, port=port)


@click.group("eval")
def evaluate():
    """Evaluation metrics over manifests and prediction files."""


@evaluate.command("counts")
@click.option("--pairs", "pairs_path", required=True, type=click.Path(exists=True),
              help="CSV with header tile_id,manual_count,auto_count.")
@click.option("--pooled", is_flag=True, default=False,
              help="Compare summed counts instead of the per-tile mean.")
def eval_counts(pairs_path, pooled):
    """Relative difference between manual and automatic counts."""
    cc = CountComparison.from_csv(pairs_path)
    value = relative_count_difference(cc, pooled=pooled)
    click.echo(json.dumps({"relative_count_difference": value, "tiles": len(cc.rows)}))


@evaluate.command("ratings")
@click.option("--manifest", required=True, type=click.Path(exists=True))
def eval_ratings(manifest):
    """Tally Good/Medium/Bad mask ratings from a manifest."""
    tally = rating_tally(read_manifest(manifest))
    click.echo(json.dumps(
        {"counts": tally.counts, "fractions": tally.fractions, "total": tally.total}
    ))


@evaluate.command("classify")
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True),
              help="CSV with header aggregate_id,label.")
@click.option("--gold", "gold_path", required=True, type=click.Path(exists=True),
              help="Annotation log (JSONL); most recent active label wins.")
@click.option("--json", "as_json", is_flag=True, default=False)
def eval_classify(pred_path, gold_path, as_json):
    """Confusion matrix and balanced accuracy of classifier predictions."""
    import csv as _csv

    with open(pred_path, newline="") as fh:
        predictions = [(row["aggregate_id"], row["label"]) for row in _csv.DictReader(fh)]
    store = AnnotationStore(gold_path)
    gold = {}
    for rec in store.active_records():
        gold[rec.aggregate_id] = rec.label.value  # log order: latest wins
    report = classification_report(predictions, gold)
    click.echo(json.dumps(report) if as_json else render_report(report))


@click.group()
@click.version_option(version=__version__, prog_name="synseg")
def main():
    """Weakly supervised aggregate segmentation and annotation tools."""


main.add_command(stain_decompose)
main.add_command(attention_map)
main.add_command(crf_refine)
main.add_command(segment)
main.add_command(index)
main.add_command(serve)
main.add_command(evaluate)
