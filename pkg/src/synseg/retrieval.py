"""Exact nearest-neighbor search over patch embeddings.

The corpus is a few thousand vectors, so brute force is both exact and
fast; no approximate structure is justified. Rows are L2-normalized at
ingest and queries at call time, making cosine similarity a plain dot
product. An index is immutable once built.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, ZeroVector
from .spt import read_tensor, write_tensor

DEFAULT_K = 250
DUPLICATE_CUTOFF = 0.995
NORM_TOL = 1e-5
METRICS = ("cosine", "euclidean")


@dataclass
class NeighborResult:
    id: str
    similarity: float
    rank: int


class EmbeddingIndex:
    """M x D embedding matrix with unit rows and unique string ids."""

    def __init__(self, vectors: np.ndarray, ids: list[str], metric: str = "cosine"):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise DimensionMismatch(f"vectors must be 2-D, got {vectors.shape}")
        if len(ids) != vectors.shape[0]:
            raise DimensionMismatch(f"{vectors.shape[0]} vectors but {len(ids)} ids")
        if len(set(ids)) != len(ids):
            raise ValueError("ids must be unique")
        if metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        if vectors.shape[0]:
            norms = np.linalg.norm(vectors, axis=1)
            off = np.abs(norms - 1.0) > NORM_TOL
            if off.any():
                raise ValueError(
                    f"{int(off.sum())} row(s) not unit-norm; normalize on ingest"
                )
        self.vectors = vectors
        self.ids = list(ids)
        self.metric = metric

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1] if self.vectors.size else 0

    @classmethod
    def from_raw(
        cls, vectors: np.ndarray, ids: list[str], metric: str = "cosine"
    ) -> "EmbeddingIndex":
        """Normalize raw embedding rows; zero rows are rejected by id."""
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise DimensionMismatch(f"vectors must be 2-D, got {vectors.shape}")
        if len(ids) != vectors.shape[0]:
            raise DimensionMismatch(f"{vectors.shape[0]} vectors but {len(ids)} ids")
        if vectors.shape[0]:
            norms = np.linalg.norm(vectors, axis=1)
            for i in np.flatnonzero(norms == 0):
                raise ZeroVector(ids[int(i)])
            vectors = vectors / norms[:, None]
        return cls(vectors, ids, metric=metric)

    def row_of(self, aggregate_id: str) -> np.ndarray:
        try:
            return self.vectors[self.ids.index(aggregate_id)]
        except ValueError:
            raise KeyError(aggregate_id) from None


def build_index(
    embeddings_file: str | Path, ids_file: str | Path, metric: str = "cosine"
) -> EmbeddingIndex:
    """Load an [M, D] SPT tensor and an ids text file (one id per line)."""
    vectors = read_tensor(embeddings_file)
    ids = [line.strip() for line in Path(ids_file).read_text().splitlines()]
    ids = [i for i in ids if i]
    return EmbeddingIndex.from_raw(vectors, ids, metric=metric)


def save_index(index: EmbeddingIndex, path: str | Path) -> None:
    """Write vectors as SPT (f32) plus a JSON sidecar with ids and metric."""
    path = Path(path)
    write_tensor(path, index.vectors.astype(np.float32))
    sidecar = {"ids": index.ids, "metric": index.metric}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar))


def load_index(path: str | Path) -> EmbeddingIndex:
    path = Path(path)
    vectors = read_tensor(path).astype(np.float64)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    # f32 round trip perturbs norms in the 1e-8 range; restore exact units
    norms = np.linalg.norm(vectors, axis=1)
    vectors = vectors / np.where(norms == 0, 1.0, norms)[:, None]
    return EmbeddingIndex(vectors, sidecar["ids"], metric=sidecar["metric"])


def _scores(index: EmbeddingIndex, query: np.ndarray) -> np.ndarray:
    sims = index.vectors @ query
    if index.metric == "euclidean":
        # unit vectors: |v - q|^2 = 2 - 2 cos; report negative distance
        return -np.sqrt(np.maximum(2.0 - 2.0 * sims, 0.0))
    return sims


def knn(index: EmbeddingIndex, query: np.ndarray, k: int = DEFAULT_K) -> list[NeighborResult]:
    """Exact top-k by similarity; ties broken by ascending id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    if len(index) == 0:
        return []
    if query.shape[0] != index.dim:
        raise DimensionMismatch(f"query dim {query.shape[0]} != index dim {index.dim}")
    qnorm = float(np.linalg.norm(query))
    if qnorm == 0:
        raise ZeroVector("query")
    scores = _scores(index, query / qnorm)
    ids = np.asarray(index.ids)
    order = np.lexsort((ids, -scores))[: min(k, len(index))]
    return [
        NeighborResult(id=str(ids[i]), similarity=float(scores[i]), rank=r + 1)
        for r, i in enumerate(order)
    ]


def flag_duplicates(
    index: EmbeddingIndex, sim_cutoff: float = DUPLICATE_CUTOFF
) -> list[tuple[str, str]]:
    """Unordered id pairs with cosine similarity >= cutoff, for review."""
    if not (0.0 < sim_cutoff <= 1.0):
        raise ValueError("sim_cutoff must lie in (0, 1]")
    m = len(index)
    pairs: list[tuple[str, str]] = []
    block = max(1, 8_000_000 // max(m, 1))
    for start in range(0, m, block):
        stop = min(start + block, m)
        sims = index.vectors[start:stop] @ index.vectors.T
        for i, j in zip(*np.nonzero(sims >= sim_cutoff)):
            gi = start + int(i)
            if gi < j:  # upper triangle only
                a, b = index.ids[gi], index.ids[int(j)]
                pairs.append((a, b) if a <= b else (b, a))
    return sorted(pairs)
