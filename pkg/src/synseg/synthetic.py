"""Synthetic brightfield tiles with known ground truth.

Scenes place non-overlapping magenta (alkaline-phosphatase-like) discs
and capsule-shaped lines on a white background, optionally with pale
hematoxylin washes that exercise the stain separation. Colors follow
the Beer-Lambert model used by the decomposition, so concentrations are
recoverable, and each tile ships a matching attention tensor whose
class-token row highlights exactly the grid cells covered by objects.

Geometry margins are chosen so the full pipeline at default thresholds
must recover every object: diameters comfortably exceed the Feret
cutoff, areas exceed the surface cutoff, and pairwise gaps exceed the
association distance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import AttentionTensor
from .imaging import Tile
from .stain import ALKALINE_REF, HEMATOXYLIN_REF

MIN_GAP = 30.0  # boundary-to-boundary, > the 20 px association distance
BORDER_MARGIN = 45.0


@dataclass
class SyntheticObject:
    kind: str  # disc | line
    centroid: tuple[float, float]  # (x, y) pixel-mean of the drawn mask
    area: int


@dataclass
class SyntheticTile:
    tile: Tile
    attn: AttentionTensor
    objects: list[SyntheticObject] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.objects)


def _place_centers(
    rng: np.random.Generator, k: int, size: int, radii: np.ndarray
) -> np.ndarray | None:
    """Rejection-sample k centers with pairwise boundary gaps >= MIN_GAP."""
    centers = np.zeros((k, 2))
    for i in range(k):
        margin = radii[i] + BORDER_MARGIN
        for _ in range(200):
            c = rng.uniform(margin, size - margin, size=2)
            gaps = (
                np.hypot(*(centers[:i] - c).T) - radii[:i] - radii[i]
                if i
                else np.array([np.inf])
            )
            if gaps.min() >= MIN_GAP:
                centers[i] = c
                break
        else:
            return None
    return centers


def _capsule_mask(
    xs: np.ndarray, ys: np.ndarray, center: np.ndarray, length: float,
    thickness: float, angle: float,
) -> np.ndarray:
    """Pixels within thickness/2 of a segment: a line with round caps."""
    half = (length - thickness) / 2.0
    d = np.array([np.cos(angle), np.sin(angle)])
    rel_x = xs - center[0]
    rel_y = ys - center[1]
    t = np.clip(rel_x * d[0] + rel_y * d[1], -half, half)
    dist2 = (rel_x - t * d[0]) ** 2 + (rel_y - t * d[1]) ** 2
    return dist2 <= (thickness / 2.0) ** 2


def _attention_for(
    cover: np.ndarray, n_heads: int, rng: np.random.Generator
) -> AttentionTensor:
    """Row-stochastic tensor whose class row highlights covered cells."""
    grid_side = cover.shape[0]
    n_tokens = grid_side**2 + 1
    a = np.full((n_heads, n_tokens, n_tokens), 1.0 / n_tokens)
    for head in range(n_heads):
        strength = 0.9 + 0.08 * rng.random()
        row = np.empty(n_tokens)
        row[0] = 0.01
        row[1:] = 0.02 + strength * cover.ravel()
        a[head, 0] = row / row.sum()
    return AttentionTensor(a=a, grid_side=grid_side)


def make_tile(
    seed: int,
    size: int = 1024,
    grid_side: int = 32,
    n_heads: int = 4,
    k: int | None = None,
    with_hematoxylin: bool = True,
    wsi_id: str = "synthetic",
    tile_id: str = "0000_0000",
) -> SyntheticTile:
    """One tile with k objects (random in [0, 10] when k is None)."""
    if size % grid_side:
        raise ValueError("size must be a multiple of grid_side")
    rng = np.random.default_rng(seed)
    if k is None:
        k = int(rng.integers(0, 11))

    kinds = ["disc" if rng.random() < 0.5 else "line" for _ in range(k)]
    radii = np.empty(k)
    params: list[tuple] = []
    for i, kind in enumerate(kinds):
        if kind == "disc":
            r = rng.uniform(19.0, 40.0)
            radii[i] = r
            params.append((r,))
        else:
            length = rng.uniform(45.0, 90.0)
            thickness = rng.uniform(8.0, 10.0)
            angle = rng.uniform(0.0, np.pi)
            radii[i] = length / 2.0
            params.append((length, thickness, angle))

    centers = _place_centers(rng, k, size, radii)
    while centers is None:  # crowded draw: thin out and retry
        k -= 1
        kinds, radii = kinds[:k], radii[:k]
        params = params[:k]
        centers = _place_centers(rng, k, size, radii)

    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    alk = np.zeros((size, size))
    hema = np.zeros((size, size))
    objects: list[SyntheticObject] = []
    for i, kind in enumerate(kinds):
        if kind == "disc":
            (r,) = params[i]
            mask = (xs - centers[i, 0]) ** 2 + (ys - centers[i, 1]) ** 2 <= r**2
        else:
            length, thickness, angle = params[i]
            mask = _capsule_mask(xs, ys, centers[i], length, thickness, angle)
        alk[mask] = rng.uniform(2.2, 3.0)
        rows, cols = np.nonzero(mask)
        objects.append(
            SyntheticObject(
                kind=kind,
                centroid=(float(cols.mean()), float(rows.mean())),
                area=int(rows.size),
            )
        )

    if with_hematoxylin:
        for _ in range(int(rng.integers(0, 4))):
            c = rng.uniform(60.0, size - 60.0, size=2)
            r = rng.uniform(40.0, 100.0)
            wash = (xs - c[0]) ** 2 + (ys - c[1]) ** 2 <= r**2
            hema[wash] += rng.uniform(0.15, 0.35)

    od = alk[..., None] * ALKALINE_REF + hema[..., None] * HEMATOXYLIN_REF
    rgb = 255.0 * np.exp(-od)
    rgb += rng.normal(0.0, 2.0, size=rgb.shape)
    pixels = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)

    cell = size // grid_side
    covered = (
        (alk > 0)
        .reshape(grid_side, cell, grid_side, cell)
        .any(axis=(1, 3))
        .astype(np.float64)
    )
    attn = _attention_for(covered, n_heads, rng)

    tile = Tile(pixels=pixels, wsi_id=wsi_id, tile_id=tile_id)
    return SyntheticTile(tile=tile, attn=attn, objects=objects)


def make_corpus(n_tiles: int = 50, seed: int = 7, **kwargs) -> list[SyntheticTile]:
    """Independent tiles from one master seed; tile i is reproducible."""
    seeds = np.random.SeedSequence(seed).generate_state(n_tiles)
    return [
        make_tile(int(s), tile_id=f"{i:04d}_0000", **kwargs)
        for i, s in enumerate(seeds)
    ]
