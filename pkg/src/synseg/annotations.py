"""Expert annotation records: append-only log, store, and dataset export.

Every submission appends one JSON line; nothing on disk is ever
rewritten, so the log is a complete audit trail and replaying it
reconstructs the store exactly. A newer submission by the same
annotator supersedes the older one in memory only.
"""

from __future__ import annotations

import io
import json
import os
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from enum import Enum
from pathlib import Path

import numpy as np

VAL_FRACTION = 289 / 953  # validation share of the reference corpus
EXPORT_FORMATS = ("jsonl", "csv")


class ClassLabel(str, Enum):
    LEWY_BODY = "LewyBody"
    AXON = "Axon"
    DENDRITE = "Dendrite"
    UNDIFFERENTIATED_NEURITE = "UndifferentiatedNeurite"
    MULTIPLE_LEWY_BODIES = "MultipleLewyBodies"
    STAINING_ARTIFACT = "StainingArtifact"


# keyboard shortcuts in the annotation UI: keys 1..6 in declaration order
CLASS_KEYS: dict[int, ClassLabel] = {
    i + 1: label for i, label in enumerate(ClassLabel)
}


@dataclass
class AnnotationRecord:
    aggregate_id: str
    label: ClassLabel
    annotator: str
    timestamp: str  # ISO-8601, UTC
    superseded: bool = False

    def to_json(self) -> dict:
        return {
            "aggregate_id": self.aggregate_id,
            "label": self.label.value,
            "annotator": self.annotator,
            "timestamp": self.timestamp,
            "superseded": self.superseded,
        }

    @classmethod
    def from_json(cls, data: dict) -> "AnnotationRecord":
        return cls(
            aggregate_id=data["aggregate_id"],
            label=ClassLabel(data["label"]),
            annotator=data["annotator"],
            timestamp=data["timestamp"],
            superseded=bool(data.get("superseded", False)),
        )


class AnnotationStore:
    """Current labeling state, reconstructed from or persisted to a log.

    With a log path, each submit is flushed and fsynced before it
    returns, so an acknowledged label survives a crash.
    """

    def __init__(self, log_path: str | Path | None = None):
        self.log_path = Path(log_path) if log_path is not None else None
        self._records: list[AnnotationRecord] = []
        self._active: dict[tuple[str, str], int] = {}
        self._last_ts: dict[str, datetime] = {}
        if self.log_path is not None and self.log_path.exists():
            with open(self.log_path) as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        self._apply(AnnotationRecord.from_json(json.loads(line)))

    def _apply(self, rec: AnnotationRecord) -> AnnotationRecord:
        key = (rec.aggregate_id, rec.annotator)
        prev = self._active.get(key)
        if prev is not None:
            self._records[prev].superseded = True
        rec.superseded = False
        self._records.append(rec)
        self._active[key] = len(self._records) - 1
        self._last_ts[rec.annotator] = _parse_ts(rec.timestamp)
        return rec

    def submit(
        self,
        aggregate_id: str,
        label: ClassLabel | str,
        annotator: str,
        timestamp: datetime | str | None = None,
    ) -> AnnotationRecord:
        """Record one label; raises ValueError for a label outside the six."""
        label = ClassLabel(label)
        if timestamp is None:
            ts = datetime.now(timezone.utc)
            last = self._last_ts.get(annotator)
            if last is not None and ts <= last:
                ts = last + timedelta(microseconds=1)  # keep per-annotator order
        elif isinstance(timestamp, str):
            ts = _parse_ts(timestamp)
        else:
            ts = timestamp
        rec = AnnotationRecord(
            aggregate_id=aggregate_id,
            label=label,
            annotator=annotator,
            timestamp=ts.isoformat(),
        )
        self._apply(rec)
        if self.log_path is not None:
            with open(self.log_path, "a") as fh:
                fh.write(json.dumps(rec.to_json()) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
        return rec

    def history(self) -> list[AnnotationRecord]:
        return list(self._records)

    def active_records(self, annotator: str | None = None) -> list[AnnotationRecord]:
        return [
            r
            for r in self._records
            if not r.superseded and (annotator is None or r.annotator == annotator)
        ]

    def active_label(
        self, aggregate_id: str, annotator: str | None = None
    ) -> ClassLabel | None:
        """Most recent active label for an aggregate (across annotators)."""
        best: ClassLabel | None = None
        for rec in self._records:
            if rec.superseded or rec.aggregate_id != aggregate_id:
                continue
            if annotator is not None and rec.annotator != annotator:
                continue
            best = rec.label  # records are in submission order
        return best

    def labeled_ids(self, annotator: str | None = None) -> set[str]:
        return {r.aggregate_id for r in self.active_records(annotator)}

    def class_counts(self, annotator: str | None = None) -> dict[str, int]:
        """Aggregates per class, by most recent active label."""
        latest: dict[str, ClassLabel] = {}
        for rec in self._records:
            if rec.superseded:
                continue
            if annotator is not None and rec.annotator != annotator:
                continue
            latest[rec.aggregate_id] = rec.label
        counts = {label.value: 0 for label in ClassLabel}
        for label in latest.values():
            counts[label.value] += 1
        return counts


def _parse_ts(text: str) -> datetime:
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts


def stratified_split(
    ids_by_class: dict[str, list[str]],
    split_seed: int,
    val_fraction: float,
) -> dict[str, str]:
    """Seeded per-class split; returns id -> 'train' | 'val'.

    Validation size per class is round(n * val_fraction); a single-member
    class trains. Each class is permuted by its own seeded generator so a
    class's membership does not depend on which other classes exist.
    """
    if not (0.0 < val_fraction < 1.0):
        raise ValueError("val_fraction must lie in (0, 1)")
    split: dict[str, str] = {}
    for class_idx, label in enumerate(ClassLabel):
        members = sorted(ids_by_class.get(label.value, []))
        n = len(members)
        if n == 0:
            continue
        n_val = 0 if n == 1 else int(np.floor(n * val_fraction + 0.5))
        rng = np.random.default_rng([split_seed, class_idx])
        order = rng.permutation(n)
        chosen = {members[i] for i in order[:n_val]}
        for mid in members:
            split[mid] = "val" if mid in chosen else "train"
    return split


def export_dataset(
    store: AnnotationStore,
    patch_refs: dict[str, str] | None = None,
    fmt: str = "jsonl",
    split_seed: int = 42,
    val_fraction: float = VAL_FRACTION,
    annotator: str | None = None,
) -> str:
    """Serialize every actively labeled aggregate with its split.

    The first line is a summary (totals and per-class counts); rows
    follow ordered by aggregate_id. Deterministic for a fixed seed.
    """
    if fmt not in EXPORT_FORMATS:
        raise ValueError(f"format must be one of {EXPORT_FORMATS}")
    patch_refs = patch_refs or {}

    latest: dict[str, ClassLabel] = {}
    for rec in store.history():
        if rec.superseded:
            continue
        if annotator is not None and rec.annotator != annotator:
            continue
        latest[rec.aggregate_id] = rec.label

    by_class: dict[str, list[str]] = {}
    for agg_id, label in latest.items():
        by_class.setdefault(label.value, []).append(agg_id)
    split = stratified_split(by_class, split_seed, val_fraction)

    rows = [
        {
            "aggregate_id": agg_id,
            "label": latest[agg_id].value,
            "patch_ref": patch_refs.get(agg_id, ""),
            "split": split[agg_id],
        }
        for agg_id in sorted(latest)
    ]
    summary = {
        "total": len(rows),
        "train": sum(1 for r in rows if r["split"] == "train"),
        "val": sum(1 for r in rows if r["split"] == "val"),
        "classes": {label.value: len(by_class.get(label.value, [])) for label in ClassLabel},
        "split_seed": split_seed,
        "val_fraction": val_fraction,
    }

    if fmt == "jsonl":
        out = [json.dumps({"summary": summary})]
        out += [json.dumps(r) for r in rows]
        return "\n".join(out) + "\n"

    buf = io.StringIO()
    buf.write("# " + json.dumps(summary) + "\n")
    buf.write("aggregate_id,label,patch_ref,split\n")
    for r in rows:
        buf.write(f"{r['aggregate_id']},{r['label']},{r['patch_ref']},{r['split']}\n")
    return buf.getvalue()
