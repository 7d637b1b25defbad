"""Instance extraction and cleanup on binary masks.

The stages mirror the post-processing order used by the segmentation
pipeline: intersect the refined mask with the stain evidence, drop
specks, label 8-connected components, merge components that sit within
a few pixels of each other (one physical aggregate often fragments),
and finally drop anything whose caliper diameter stays below the size
of a credible aggregate.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import DimensionMismatch
from .geometry import feret_diameter
from .imaging import BinaryMask, InstanceMask

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)
FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)

DEFAULT_T_S = 100
DEFAULT_T_D = 20.0
DEFAULT_T_F = 33.0


def _relabel_by_raster(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Renumber components 1..K by first pixel in raster (row-major) order.

    Returns the relabeled array and, for bookkeeping, ``old_of_new`` where
    ``old_of_new[k]`` is the original label now called ``k + 1``.
    """
    flat = labels.ravel()
    nz = flat > 0
    if not nz.any():
        return np.zeros_like(labels, dtype=np.int32), np.empty(0, dtype=np.int64)
    values = flat[nz]
    uniq, first = np.unique(values, return_index=True)
    order = np.argsort(first, kind="stable")
    old_of_new = uniq[order]
    lut = np.zeros(int(flat.max()) + 1, dtype=np.int32)
    lut[old_of_new] = np.arange(1, len(old_of_new) + 1, dtype=np.int32)
    return lut[labels], old_of_new


def combine_masks(refined: BinaryMask, alkaline: BinaryMask) -> BinaryMask:
    """Keep refined components backed by at least one alkaline pixel."""
    if refined.bits.shape != alkaline.bits.shape:
        raise DimensionMismatch(
            f"mask shapes differ: {refined.bits.shape} vs {alkaline.bits.shape}"
        )
    raw, n = ndimage.label(refined.bits, structure=EIGHT_CONNECTED)
    keep = np.zeros(n + 1, dtype=bool)
    hit = np.unique(raw[alkaline.bits])
    keep[hit[hit > 0]] = True
    return BinaryMask(bits=keep[raw], provenance="combined")


def remove_small(mask: BinaryMask, t_s: float = DEFAULT_T_S) -> BinaryMask:
    """Drop components with area strictly below ``t_s`` square pixels."""
    if t_s < 0:
        raise ValueError("t_s must be >= 0")
    raw, n = ndimage.label(mask.bits, structure=EIGHT_CONNECTED)
    if n == 0:
        return BinaryMask(bits=mask.bits.copy(), provenance=mask.provenance)
    sizes = np.bincount(raw.ravel(), minlength=n + 1)
    keep = sizes >= t_s
    keep[0] = False
    return BinaryMask(bits=keep[raw], provenance=mask.provenance)


def label_components(mask: BinaryMask) -> InstanceMask:
    """8-connected components, numbered by raster order of first pixel."""
    raw, _ = ndimage.label(mask.bits, structure=EIGHT_CONNECTED)
    labels, old_of_new = _relabel_by_raster(raw)
    counts = {k + 1: 1 for k in range(len(old_of_new))}
    return InstanceMask(labels=labels, merged_counts=counts)


def _boundary_points(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(row, col) coordinates and component ids of 4-boundary pixels.

    The closest pixel pair between two components is always realized at
    their 4-boundaries, so restricting the neighbor search to boundary
    pixels loses nothing. Distinct 8-connected components are never
    adjacent, so eroding the union foreground erodes each component
    independently.
    """
    fg = labels > 0
    interior = ndimage.binary_erosion(fg, structure=FOUR_CONNECTED, border_value=0)
    boundary = fg & ~interior
    coords = np.argwhere(boundary)
    return coords, labels[boundary]


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a: int, b: int):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def associate_components(inst: InstanceMask, t_d: float = DEFAULT_T_D) -> InstanceMask:
    """Merge components whose minimum boundary distance is <= ``t_d``.

    Association is transitive: if A joins B and B joins C, all three
    become one instance even when A and C sit far apart.
    """
    if t_d < 0:
        raise ValueError("t_d must be >= 0")
    labels = inst.labels
    n = int(labels.max())
    if n <= 1:
        return InstanceMask(
            labels=labels.copy(), merged_counts=dict(inst.merged_counts)
        )

    coords, owner = _boundary_points(labels)
    tree = cKDTree(coords.astype(np.float64))
    pairs = tree.query_pairs(r=t_d, output_type="ndarray")

    uf = _UnionFind(n + 1)
    for a, b in pairs:
        ca, cb = int(owner[a]), int(owner[b])
        if ca != cb:
            uf.union(ca, cb)

    root = np.zeros(n + 1, dtype=np.int64)
    for lab in range(1, n + 1):
        root[lab] = uf.find(lab)
    merged = root[labels]
    relabeled, old_of_new = _relabel_by_raster(merged)

    new_of_root = {int(old): new + 1 for new, old in enumerate(old_of_new)}
    counts: dict[int, int] = {}
    for lab in range(1, n + 1):
        new = new_of_root[int(root[lab])]
        counts[new] = counts.get(new, 0) + inst.merged_counts.get(lab, 1)
    return InstanceMask(labels=relabeled, merged_counts=counts)


def filter_feret(inst: InstanceMask, t_f: float = DEFAULT_T_F) -> InstanceMask:
    """Drop instances whose caliper diameter is strictly below ``t_f``."""
    if t_f < 0:
        raise ValueError("t_f must be >= 0")
    labels = inst.labels
    n = int(labels.max())
    if n == 0:
        return InstanceMask(labels=labels.copy(), merged_counts={})
    keep = np.zeros(n + 1, dtype=bool)
    boxes = ndimage.find_objects(labels)
    for lab in range(1, n + 1):
        box = boxes[lab - 1]
        if box is None:
            continue
        pts = np.argwhere(labels[box] == lab)  # offset-free: distances only
        if len(pts) and feret_diameter(pts) >= t_f:
            keep[lab] = True
    cleaned = np.where(keep[labels], labels, 0)
    relabeled, old_of_new = _relabel_by_raster(cleaned)
    counts = {
        new + 1: inst.merged_counts.get(int(old), 1)
        for new, old in enumerate(old_of_new)
    }
    return InstanceMask(labels=relabeled, merged_counts=counts)
