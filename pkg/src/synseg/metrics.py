"""Evaluation computations: count agreement, rating tallies, accuracy.

All functions are pure; file parsing lives in the CLI layer. Counts and
matrices use plain integer arithmetic so results are reproducible to
the last digit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .annotations import ClassLabel
from .errors import AllRowsEmpty, EmptyInput, MissingGold, UnratedRecord
from .pipeline import MASK_RATINGS, AggregateRecord

DEFAULT_LABELS = tuple(label.value for label in ClassLabel)


@dataclass
class CountComparison:
    """Per-tile manual vs automatic aggregate counts."""

    rows: list[tuple[str, int, int]]  # (tile_id, manual_count, auto_count)

    def __post_init__(self):
        for tile_id, manual, auto in self.rows:
            if manual < 0 or auto < 0:
                raise ValueError(f"negative count for tile {tile_id!r}")

    @classmethod
    def from_csv(cls, path: str | Path) -> "CountComparison":
        rows = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                rows.append(
                    (row["tile_id"], int(row["manual_count"]), int(row["auto_count"]))
                )
        return cls(rows=rows)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["tile_id", "manual_count", "auto_count"])
            writer.writerows(self.rows)


def relative_count_difference(cc: CountComparison, pooled: bool = False) -> float:
    """Mean over tiles of |auto - manual| / manual.

    A tile with manual = auto = 0 contributes 0; manual = 0 with
    detections contributes 1 (full miss) to keep the mean finite. The
    pooled variant compares summed counts instead of averaging per tile.
    """
    if not cc.rows:
        raise EmptyInput("no count rows")
    manual_total = sum(m for _, m, _ in cc.rows)
    if manual_total == 0:
        raise EmptyInput("every row has manual_count = 0")
    if pooled:
        auto_total = sum(a for _, _, a in cc.rows)
        return abs(auto_total - manual_total) / manual_total
    per_tile = []
    for _, manual, auto in cc.rows:
        if manual == 0:
            per_tile.append(0.0 if auto == 0 else 1.0)
        else:
            per_tile.append(abs(auto - manual) / manual)
    return float(np.mean(per_tile))


@dataclass
class RatingTally:
    counts: dict[str, int]
    fractions: dict[str, float]
    total: int


def rating_tally(records: list[AggregateRecord]) -> RatingTally:
    """Fractions of Good/Medium/Bad mask ratings over rated records."""
    if not records:
        raise EmptyInput("no records to tally")
    missing = [r.aggregate_id for r in records if r.mask_rating is None]
    if missing:
        raise UnratedRecord(missing)
    counts = {name: 0 for name in MASK_RATINGS}
    for rec in records:
        counts[rec.mask_rating] += 1
    total = len(records)
    fractions = {name: counts[name] / total for name in MASK_RATINGS}
    return RatingTally(counts=counts, fractions=fractions, total=total)


@dataclass
class ConfusionMatrix:
    """Rows = true class, columns = predicted class."""

    matrix: np.ndarray
    labels: tuple[str, ...] = DEFAULT_LABELS

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.int64)
        c = len(self.labels)
        if self.matrix.shape != (c, c):
            raise ValueError(
                f"matrix shape {self.matrix.shape} does not match {c} labels"
            )
        if (self.matrix < 0).any():
            raise ValueError("confusion matrix entries must be >= 0")

    @classmethod
    def from_pairs(
        cls,
        true_labels: list[str],
        pred_labels: list[str],
        labels: tuple[str, ...] = DEFAULT_LABELS,
    ) -> "ConfusionMatrix":
        if len(true_labels) != len(pred_labels):
            raise ValueError("true/pred length mismatch")
        pos = {name: i for i, name in enumerate(labels)}
        matrix = np.zeros((len(labels), len(labels)), dtype=np.int64)
        for t, p in zip(true_labels, pred_labels):
            matrix[pos[t], pos[p]] += 1
        return cls(matrix=matrix, labels=tuple(labels))


def balanced_accuracy(cm: ConfusionMatrix) -> float:
    """Unweighted mean of per-class recall; zero-support classes excluded."""
    support = cm.matrix.sum(axis=1)
    present = support > 0
    if not present.any():
        raise AllRowsEmpty("confusion matrix has no populated rows")
    recalls = np.diag(cm.matrix)[present] / support[present]
    return float(recalls.mean())


def classification_report(
    predictions: list[tuple[str, str]],
    gold: dict[str, str],
    labels: tuple[str, ...] = DEFAULT_LABELS,
) -> dict:
    """Join predictions to gold labels and summarize per-class quality.

    ``predictions`` holds (aggregate_id, predicted label) rows; every id
    must have a gold label or MissingGold is raised with the culprits.
    """
    missing = [agg_id for agg_id, _ in predictions if agg_id not in gold]
    if missing:
        raise MissingGold(missing)
    true_labels = [gold[agg_id] for agg_id, _ in predictions]
    pred_labels = [label for _, label in predictions]
    cm = ConfusionMatrix.from_pairs(true_labels, pred_labels, labels=labels)

    support = cm.matrix.sum(axis=1)
    predicted = cm.matrix.sum(axis=0)
    diag = np.diag(cm.matrix)
    per_class = {}
    for i, name in enumerate(labels):
        per_class[name] = {
            "support": int(support[i]),
            "predicted": int(predicted[i]),
            "recall": float(diag[i] / support[i]) if support[i] else None,
            "precision": float(diag[i] / predicted[i]) if predicted[i] else None,
        }
    return {
        "labels": list(labels),
        "confusion": cm.matrix.tolist(),
        "balanced_accuracy": balanced_accuracy(cm),
        "n": len(predictions),
        "per_class": per_class,
    }


def render_report(report: dict) -> str:
    """Fixed-width human-readable rendering of a classification report."""
    lines = []
    name_w = max(len(n) for n in report["labels"]) + 2
    lines.append(f"{'class':<{name_w}}{'support':>8}{'recall':>8}{'precision':>10}")
    for name in report["labels"]:
        row = report["per_class"][name]
        rec = "-" if row["recall"] is None else f"{row['recall']:.3f}"
        prec = "-" if row["precision"] is None else f"{row['precision']:.3f}"
        lines.append(f"{name:<{name_w}}{row['support']:>8}{rec:>8}{prec:>10}")
    lines.append(f"balanced accuracy: {report['balanced_accuracy']:.4f}  (n={report['n']})")
    return "\n".join(lines)
