"""Weakly supervised segmentation and annotation of stained aggregates."""

from .errors import (
    AllRowsEmpty,
    DimensionMismatch,
    EmptyInput,
    FormatError,
    InsufficientTissue,
    MissingGold,
    MissingTile,
    ShapeError,
    SizeError,
    StageError,
    SynsegError,
    UnratedRecord,
    ZeroVector,
)

__version__ = "0.1.0"

__all__ = [
    "AllRowsEmpty",
    "DimensionMismatch",
    "EmptyInput",
    "FormatError",
    "InsufficientTissue",
    "MissingGold",
    "MissingTile",
    "ShapeError",
    "SizeError",
    "StageError",
    "SynsegError",
    "UnratedRecord",
    "ZeroVector",
    "__version__",
]
