"""Class-token attention to probability maps and tile-score selection."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeError
from .imaging import BinaryMask, ProbabilityMap

ROW_SUM_TOL = 1e-4


@dataclass
class AttentionTensor:
    """Multi-head self-attention of one transformer layer.

    Shape h x (N+1) x (N+1) with N = grid_side**2 patch tokens plus the
    class token at row/column ``cls_index``. Every row of every head must
    be a distribution (sums to 1 within 1e-4).
    """

    a: np.ndarray
    grid_side: int
    layer: str = "last"
    cls_index: int = 0

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)

    def validate(self) -> None:
        if self.a.ndim != 3 or self.a.shape[1] != self.a.shape[2]:
            raise ShapeError(f"attention must be h x (N+1) x (N+1), got {self.a.shape}")
        n_tokens = self.a.shape[1]
        if self.grid_side**2 + 1 != n_tokens:
            raise ShapeError(
                f"grid_side {self.grid_side} implies {self.grid_side ** 2 + 1} "
                f"tokens, tensor has {n_tokens}"
            )
        if not (0 <= self.cls_index < n_tokens):
            raise ShapeError(f"cls_index {self.cls_index} out of range")
        if self.a.size and self.a.min() < 0:
            raise ValueError("attention weights must be nonnegative")
        sums = self.a.sum(axis=2)
        if self.a.size and np.max(np.abs(sums - 1.0)) > ROW_SUM_TOL:
            raise ValueError("attention rows must sum to 1 within 1e-4")


def class_attention(attn: AttentionTensor) -> np.ndarray:
    """Mean over heads of the class-token row, class column excluded.

    Heads are accumulated sequentially so the result is reproducible
    bit-for-bit regardless of array layout.
    """
    attn.validate()
    n_heads = attn.a.shape[0]
    patch_cols = np.delete(np.arange(attn.a.shape[2]), attn.cls_index)
    total = np.zeros(len(patch_cols), dtype=np.float64)
    for k in range(n_heads):
        total += attn.a[k, attn.cls_index, patch_cols]
    return total / n_heads


def bilinear_resize(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers and edge clamping."""
    values = np.asarray(values, dtype=np.float64)
    in_h, in_w = values.shape
    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    ys = np.clip(ys, 0.0, in_h - 1.0)
    xs = np.clip(xs, 0.0, in_w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = values[np.ix_(y0, x0)] * (1 - wx) + values[np.ix_(y0, x1)] * wx
    bottom = values[np.ix_(y1, x0)] * (1 - wx) + values[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bottom * wy


def attention_to_map(
    a_cls: np.ndarray, grid_side: int, out_h: int, out_w: int
) -> ProbabilityMap:
    """Reshape class attention to the token grid, resize, and renormalize.

    Min-max rescaling maps any non-constant input onto the full [0, 1]
    range; a constant vector carries no localization signal and maps to
    all zeros.
    """
    a_cls = np.asarray(a_cls, dtype=np.float64)
    if a_cls.ndim != 1 or a_cls.size != grid_side**2:
        raise ShapeError(
            f"class attention has {a_cls.size} entries, expected {grid_side ** 2}"
        )
    grid = a_cls.reshape(grid_side, grid_side)
    resized = bilinear_resize(grid, out_h, out_w)
    lo, hi = float(resized.min()), float(resized.max())
    if hi - lo <= 0:
        return ProbabilityMap(np.zeros((out_h, out_w)), provenance="attention")
    return ProbabilityMap((resized - lo) / (hi - lo), provenance="attention")


def threshold_attention(p: ProbabilityMap, tau: float = 0.1) -> BinaryMask:
    """Inclusive threshold: a pixel exactly at tau is foreground."""
    if not (0.0 < tau < 1.0):
        raise ValueError("tau must lie in (0, 1)")
    return BinaryMask(bits=p.values >= tau, provenance="attention")


@dataclass
class TileScoreManifest:
    """Per-tile classifier scores in [0, 1], unique per (wsi_id, tile_id)."""

    rows: list[tuple[str, str, float]] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for wsi_id, tile_id, score in self.rows:
            if not (0.0 <= score <= 1.0):
                raise ValueError(f"score {score} for {wsi_id}/{tile_id} not in [0,1]")
            key = (wsi_id, tile_id)
            if key in seen:
                raise ValueError(f"duplicate tile entry {key}")
            seen.add(key)

    @classmethod
    def from_csv(cls, path: str | Path) -> "TileScoreManifest":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                rows.append((row["wsi_id"], row["tile_id"], float(row["score"])))
        return cls(rows=rows)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["wsi_id", "tile_id", "score"])
            writer.writerows(self.rows)


def select_positive_tiles(
    manifest: TileScoreManifest, cutoff: float = 0.5
) -> list[tuple[str, str]]:
    """Tiles the external classifier flagged, ordered by (wsi_id, tile_id)."""
    if not (0.0 <= cutoff <= 1.0):
        raise ValueError("cutoff must lie in [0, 1]")
    hits = [(w, t) for w, t, s in manifest.rows if s >= cutoff]
    return sorted(hits)
