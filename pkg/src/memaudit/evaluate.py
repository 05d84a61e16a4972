"""Classification metrics over the three-way label set, silhouette on 1-D
similarity scores, and score-histogram export."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError

LABELS = ("different", "similar", "duplicate")
_LABEL_INDEX = {name: i for i, name in enumerate(LABELS)}


def _label_indices(labels, what: str) -> np.ndarray:
    try:
        return np.array([_LABEL_INDEX[l] for l in labels], dtype=np.int64)
    except KeyError as exc:
        raise ValidationError(f"{what}: unknown label {exc.args[0]!r}") from exc


@dataclass(frozen=True)
class ConfusionTable:
    """counts[i, j] = pairs with true label i predicted as j (label order:
    different, similar, duplicate)."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.shape != (3, 3):
            raise ValidationError(f"confusion table must be 3x3, got {c.shape}")
        if np.any(c < 0):
            raise ValidationError("confusion table counts must be >= 0")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @classmethod
    def from_pairs(cls, true_labels, predicted_labels) -> "ConfusionTable":
        t = _label_indices(true_labels, "true labels")
        p = _label_indices(predicted_labels, "predicted labels")
        if len(t) != len(p):
            raise ValidationError(f"label list lengths differ: {len(t)} vs {len(p)}")
        counts = np.zeros((3, 3), dtype=np.int64)
        np.add.at(counts, (t, p), 1)
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class ClassificationMetrics:
    per_class: dict[str, ClassMetrics]
    macro_f1: float

    def to_dict(self) -> dict:
        return {
            "per_class": {
                name: {"precision": m.precision, "recall": m.recall, "f1": m.f1}
                for name, m in self.per_class.items()
            },
            "macro_f1": self.macro_f1,
        }


def precision_recall_f1(table: ConfusionTable) -> ClassificationMetrics:
    """Per-class precision/recall/F1 with 0/0 -> 0, macro F1 unweighted."""
    c = table.counts
    per = {}
    f1s = []
    for i, name in enumerate(LABELS):
        tp = float(c[i, i])
        pred = float(c[:, i].sum())
        true = float(c[i, :].sum())
        prec = tp / pred if pred else 0.0
        rec = tp / true if true else 0.0
        f1 = 2.0 * prec * rec / (prec + rec) if (prec + rec) else 0.0
        per[name] = ClassMetrics(prec, rec, f1)
        f1s.append(f1)
    return ClassificationMetrics(per_class=per, macro_f1=float(np.mean(f1s)))


def macro_f1(true_labels, predicted_labels) -> float:
    return precision_recall_f1(ConfusionTable.from_pairs(true_labels, predicted_labels)).macro_f1


def silhouette(scores, labels) -> float:
    """Mean silhouette over points, distance |s_i - s_j| on the score line.

    Points whose class has a single member contribute 0, as does any point
    with a(i) = b(i) = 0. Needs at least two classes present.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValidationError(f"silhouette: scores must be a nonempty 1-D array, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValidationError("silhouette: non-finite score")
    idx = _label_indices(labels, "silhouette labels")
    if len(idx) != len(s):
        raise ValidationError(f"silhouette: {len(s)} scores but {len(idx)} labels")
    present = sorted(set(idx.tolist()))
    if len(present) < 2:
        raise ValidationError("silhouette: needs at least two classes present")

    dist = np.abs(s[:, None] - s[None, :])
    members = {k: idx == k for k in present}
    sizes = {k: int(m.sum()) for k, m in members.items()}

    vals = np.zeros(len(s))
    for i in range(len(s)):
        own = idx[i]
        if sizes[own] == 1:
            continue
        a = dist[i, members[own]].sum() / (sizes[own] - 1)
        b = min(
            dist[i, members[k]].mean() for k in present if k != own
        )
        denom = max(a, b)
        vals[i] = (b - a) / denom if denom > 0 else 0.0
    return float(vals.mean())


@dataclass
class HistogramExport:
    """Per-class score histograms over [-1, 1] plus threshold markers."""

    bin_edges: np.ndarray
    counts: dict[str, np.ndarray]
    thresholds: dict[str, float] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "bin_edges": [float(e) for e in self.bin_edges],
            "counts": {k: [int(c) for c in v] for k, v in self.counts.items()},
            "thresholds": dict(self.thresholds),
        }

    def to_csv(self) -> str:
        lines = ["class,bin_lo,bin_hi,count"]
        for name in LABELS:
            if name not in self.counts:
                continue
            for i, c in enumerate(self.counts[name]):
                lines.append(
                    f"{name},{self.bin_edges[i]:.6g},{self.bin_edges[i + 1]:.6g},{int(c)}"
                )
        return "\n".join(lines) + "\n"

    def save(self, json_path=None, csv_path=None) -> None:
        if json_path is not None:
            Path(json_path).write_text(json.dumps(self.to_json_dict(), indent=1) + "\n")
        if csv_path is not None:
            Path(csv_path).write_text(self.to_csv())


def export_histograms(scores, labels, bins: int = 50,
                      thresholds: dict[str, float] | None = None) -> HistogramExport:
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1:
        raise ValidationError(f"histogram: scores must be 1-D, got shape {s.shape}")
    if s.size and (s.min() < -1.0 - 1e-9 or s.max() > 1.0 + 1e-9):
        raise ValidationError("histogram: scores outside [-1, 1]")
    if bins < 1:
        raise ValidationError(f"histogram: bins must be >= 1, got {bins}")
    idx = _label_indices(labels, "histogram labels")
    if len(idx) != len(s):
        raise ValidationError(f"histogram: {len(s)} scores but {len(idx)} labels")
    edges = np.linspace(-1.0, 1.0, bins + 1)
    counts = {}
    for k, name in enumerate(LABELS):
        sel = s[idx == k]
        counts[name], _ = np.histogram(np.clip(sel, -1.0, 1.0), bins=edges)
    return HistogramExport(bin_edges=edges, counts=counts, thresholds=dict(thresholds or {}))
