"""Exception types shared across the pipeline."""


class SynsegError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(SynsegError):
    """A serialized tensor or file does not match its declared format."""


class MissingTile(SynsegError):
    """A tile required to assemble a patch window is absent from the store."""


class InsufficientTissue(SynsegError):
    """Too few foreground pixels to fit a stain decomposition."""


class ShapeError(SynsegError):
    """Array dimensions are inconsistent with the declared grid."""


class SizeError(SynsegError):
    """Input exceeds the pixel-count cap of the exact CRF mode."""


class DimensionMismatch(SynsegError):
    """Embedding/query dimensions or id counts do not line up."""


class ZeroVector(SynsegError):
    """An embedding row has zero norm and cannot be normalized."""

    def __init__(self, vector_id: str):
        super().__init__(f"embedding for id {vector_id!r} has zero norm")
        self.vector_id = vector_id


class EmptyInput(SynsegError):
    """A metric was asked to aggregate over zero rows."""


class UnratedRecord(SynsegError):
    """Aggregate records without a mask rating were passed to the tally."""

    def __init__(self, ids):
        ids = list(ids)
        super().__init__(f"{len(ids)} record(s) missing mask_rating: {ids[:10]}")
        self.ids = ids


class AllRowsEmpty(SynsegError):
    """Every confusion-matrix row has zero support."""


class MissingGold(SynsegError):
    """Predictions reference aggregate ids that have no gold label."""

    def __init__(self, ids):
        ids = list(ids)
        super().__init__(f"{len(ids)} prediction(s) without gold label: {ids[:10]}")
        self.ids = ids


class StageError(SynsegError):
    """Wraps a failure inside run_pipeline with the failing stage name."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"pipeline stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
