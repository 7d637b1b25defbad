"""Grid-aligned tile store and patch cropping across tile seams."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .errors import MissingTile, ShapeError
from .imaging import Patch, Tile, load_tile_image

_TILE_NAME = re.compile(r"^(\d+)_(\d+)\.(png|tif|tiff)$", re.IGNORECASE)


def tile_id_for(gx: int, gy: int) -> str:
    return f"{gx:04d}_{gy:04d}"


class TileStore:
    """Tiles of one or more WSIs keyed by (wsi_id, grid_x, grid_y).

    All tiles of a WSI share one size; the WSI extent is the full grid
    bounding box. Tiles registered by path are loaded lazily, so a patch
    near a seam only touches its neighbors. Reads are side-effect free
    apart from cache fills, so concurrent readers are safe.
    """

    def __init__(self, tile_size: int = 1024):
        self.tile_size = int(tile_size)
        self._pixels: dict[tuple[str, int, int], np.ndarray] = {}
        self._paths: dict[tuple[str, int, int], Path] = {}
        self._grid_max: dict[str, tuple[int, int]] = {}

    def _note_cell(self, wsi_id: str, gx: int, gy: int) -> None:
        mx, my = self._grid_max.get(wsi_id, (-1, -1))
        self._grid_max[wsi_id] = (max(mx, gx), max(my, gy))

    def add(self, tile: Tile) -> None:
        h, w = tile.shape
        if (h, w) != (self.tile_size, self.tile_size):
            raise ShapeError(
                f"tile {tile.tile_id!r} is {h}x{w}, store expects {self.tile_size}"
            )
        if tile.origin_x % self.tile_size or tile.origin_y % self.tile_size:
            raise ShapeError(
                f"tile origin ({tile.origin_x},{tile.origin_y}) not grid aligned"
            )
        gx = tile.origin_x // self.tile_size
        gy = tile.origin_y // self.tile_size
        self._pixels[(tile.wsi_id, gx, gy)] = tile.pixels
        self._note_cell(tile.wsi_id, gx, gy)

    def add_path(self, wsi_id: str, gx: int, gy: int, path: str | Path) -> None:
        self._paths[(wsi_id, gx, gy)] = Path(path)
        self._note_cell(wsi_id, gx, gy)

    @classmethod
    def from_directory(
        cls, directory: str | Path, wsi_id: str, tile_size: int = 1024
    ) -> "TileStore":
        """Index a directory of tiles named ``<gx>_<gy>.png`` (grid coords)."""
        store = cls(tile_size=tile_size)
        for entry in sorted(Path(directory).iterdir()):
            m = _TILE_NAME.match(entry.name)
            if m:
                store.add_path(wsi_id, int(m.group(1)), int(m.group(2)), entry)
        return store

    def has(self, wsi_id: str, gx: int, gy: int) -> bool:
        key = (wsi_id, gx, gy)
        return key in self._pixels or key in self._paths

    def pixels(self, wsi_id: str, gx: int, gy: int) -> np.ndarray:
        key = (wsi_id, gx, gy)
        cached = self._pixels.get(key)
        if cached is not None:
            return cached
        path = self._paths.get(key)
        if path is None:
            raise MissingTile(f"tile ({gx},{gy}) of wsi {wsi_id!r} not in store")
        arr = load_tile_image(path)
        if arr.shape[:2] != (self.tile_size, self.tile_size):
            raise ShapeError(f"{path} is {arr.shape[:2]}, expected {self.tile_size}")
        self._pixels[key] = arr
        return arr

    def extent(self, wsi_id: str) -> tuple[int, int]:
        """(width, height) of the WSI grid bounding box in pixels."""
        if wsi_id not in self._grid_max:
            raise MissingTile(f"no tiles registered for wsi {wsi_id!r}")
        mx, my = self._grid_max[wsi_id]
        return (mx + 1) * self.tile_size, (my + 1) * self.tile_size

    def wsi_ids(self) -> list[str]:
        return sorted(self._grid_max)

    def tile_ids(self, wsi_id: str) -> list[str]:
        keys = sorted(
            (gx, gy)
            for (w, gx, gy) in set(self._pixels) | set(self._paths)
            if w == wsi_id
        )
        return [tile_id_for(gx, gy) for gx, gy in keys]


def crop_patch(
    store: TileStore,
    wsi_id: str,
    center: tuple[int, int],
    size: int = 256,
    aggregate_id: str = "",
) -> Patch:
    """Cut a ``size`` x ``size`` window centered on *center* (WSI frame).

    The window may span tile seams; margins falling outside the WSI
    extent are filled by reflection about the border. Raises MissingTile
    when an in-extent cell is absent from the store.
    """
    cx, cy = int(center[0]), int(center[1])
    width, height = store.extent(wsi_id)
    if not (0 <= cx < width and 0 <= cy < height):
        raise ValueError(f"center ({cx},{cy}) outside WSI extent {width}x{height}")
    half = size // 2
    x0, y0 = cx - half, cy - half
    x1, y1 = x0 + size, y0 + size

    ix0, iy0 = max(x0, 0), max(y0, 0)
    ix1, iy1 = min(x1, width), min(y1, height)
    t = store.tile_size
    region = np.empty((iy1 - iy0, ix1 - ix0, 3), dtype=np.uint8)
    for gy in range(iy0 // t, (iy1 - 1) // t + 1):
        for gx in range(ix0 // t, (ix1 - 1) // t + 1):
            if not store.has(wsi_id, gx, gy):
                raise MissingTile(
                    f"patch at ({cx},{cy}) needs tile ({gx},{gy}) of {wsi_id!r}"
                )
            pix = store.pixels(wsi_id, gx, gy)
            ox0, oy0 = gx * t, gy * t
            sx0, sy0 = max(ix0, ox0), max(iy0, oy0)
            sx1, sy1 = min(ix1, ox0 + t), min(iy1, oy0 + t)
            region[sy0 - iy0 : sy1 - iy0, sx0 - ix0 : sx1 - ix0] = pix[
                sy0 - oy0 : sy1 - oy0, sx0 - ox0 : sx1 - ox0
            ]

    pad = ((iy0 - y0, y1 - iy1), (ix0 - x0, x1 - ix1), (0, 0))
    if any(p for pair in pad for p in pair):
        region = np.pad(region, pad, mode="symmetric")
    return Patch(pixels=region, center_x=cx, center_y=cy, aggregate_id=aggregate_id)
