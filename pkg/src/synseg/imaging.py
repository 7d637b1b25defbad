"""Core image containers and optical-density conversion."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ShapeError

MASK_PROVENANCES = ("alkaline", "attention", "refined", "combined")


@dataclass
class Tile:
    """An RGB image block with its position in the whole-slide frame."""

    pixels: np.ndarray  # H x W x 3 uint8
    origin_x: int = 0
    origin_y: int = 0
    wsi_id: str = ""
    tile_id: str = ""

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ShapeError(f"tile pixels must be HxWx3, got {self.pixels.shape}")
        if self.pixels.dtype != np.uint8:
            raise ShapeError(f"tile pixels must be uint8, got {self.pixels.dtype}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[0], self.pixels.shape[1]


@dataclass
class OdImage:
    """Per-channel optical density of a tile (nonnegative, dimensionless)."""

    values: np.ndarray  # H x W x 3 float64
    tile_id: str = ""


@dataclass
class ProbabilityMap:
    """Pixel-wise values in [0, 1] with a provenance tag."""

    values: np.ndarray  # H x W float64
    provenance: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeError(f"probability map must be 2-D, got {self.values.shape}")
        if self.values.size and (self.values.min() < 0 or self.values.max() > 1):
            raise ValueError("probability map values must lie in [0, 1]")


@dataclass
class BinaryMask:
    """Boolean mask with the pipeline stage that produced it."""

    bits: np.ndarray  # H x W bool
    provenance: str

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.ndim != 2:
            raise ShapeError(f"mask must be 2-D, got {self.bits.shape}")
        if self.provenance not in MASK_PROVENANCES:
            raise ValueError(
                f"provenance {self.provenance!r} not in {MASK_PROVENANCES}"
            )


@dataclass
class InstanceMask:
    """Labeled components: 0 = background, labels contiguous 1..K.

    ``merged_counts`` maps each label to the number of original connected
    components it absorbed during distance association (1 if unmerged).
    """

    labels: np.ndarray  # H x W int32
    merged_counts: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int32)
        if self.labels.ndim != 2:
            raise ShapeError(f"label image must be 2-D, got {self.labels.shape}")

    @property
    def n_components(self) -> int:
        return int(self.labels.max()) if self.labels.size else 0


@dataclass
class Patch:
    """Fixed-size RGB crop centered on an aggregate centroid."""

    pixels: np.ndarray  # size x size x 3 uint8
    center_x: int
    center_y: int
    aggregate_id: str = ""


def rgb_to_od(tile: Tile, i0: float = 255.0, eps: float = 1.0) -> OdImage:
    """Convert RGB intensities to optical density via Beer-Lambert.

    OD_c = -ln(max(I_c, eps) / i0), clipped at zero so intensities above
    the background level i0 do not produce negative densities.
    """
    if i0 <= 0:
        raise ValueError("i0 must be positive")
    if eps <= 0:
        raise ValueError("eps must be positive")
    intensities = np.maximum(tile.pixels.astype(np.float64), eps)
    od = -np.log(intensities / i0)
    np.clip(od, 0.0, None, out=od)
    return OdImage(values=od, tile_id=tile.tile_id)


def load_tile_image(path: str | Path) -> np.ndarray:
    """Read an 8-bit PNG/TIFF as an HxWx3 uint8 array."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    return arr


def save_rgb_png(path: str | Path, pixels: np.ndarray) -> None:
    Image.fromarray(np.asarray(pixels, dtype=np.uint8), mode="RGB").save(path)


def save_label_png(path: str | Path, labels: np.ndarray) -> None:
    """Write a label image as 16-bit grayscale PNG."""
    labels = np.asarray(labels)
    if labels.size and labels.max() > np.iinfo(np.uint16).max:
        raise ValueError("more than 65535 labels cannot be stored as 16-bit PNG")
    Image.fromarray(labels.astype(np.uint16)).save(path)


def load_label_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img, dtype=np.uint16).astype(np.int32)


def save_mask_png(path: str | Path, mask: BinaryMask) -> None:
    Image.fromarray((mask.bits * np.uint8(255)), mode="L").save(path)
