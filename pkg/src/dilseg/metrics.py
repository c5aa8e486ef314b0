"""Confusion-matrix accumulation and the reported agreement metrics.

All metrics count non-void pixels only. Classes absent from both reference
and prediction carry NaN in per-class vectors and are excluded from the
averaged numbers, so a dataset trained without some label never drags the
report to 0/0.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

__all__ = ["ConfusionMatrix", "MetricsBundle", "format_report", "metrics_csv"]


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (C, C) int64, entry (true, predicted)

    def __init__(self, num_classes: int):
        if num_classes < 1:
            raise ValueError(f"need at least one class, got {num_classes}")
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accumulate(self, labels, predictions, void_mask=None) -> None:
        """Tally (label, prediction) pairs over non-void pixels."""
        labels = np.asarray(labels)
        predictions = np.asarray(predictions)
        if labels.dtype.kind not in "iu" or predictions.dtype.kind not in "iu":
            raise ValueError(
                f"labels/predictions must be integers, got {labels.dtype}/"
                f"{predictions.dtype}"
            )
        if labels.shape != predictions.shape:
            raise ValueError(
                f"labels {labels.shape} and predictions {predictions.shape} differ"
            )
        if void_mask is not None:
            keep = ~np.asarray(void_mask, dtype=bool)
            labels = labels[keep]
            predictions = predictions[keep]
        labels = labels.ravel().astype(np.int64)
        predictions = predictions.ravel().astype(np.int64)
        if labels.size == 0:
            return
        c = self.num_classes
        if labels.min() < 0 or labels.max() >= c:
            raise ValueError(f"labels outside [0, {c})")
        if predictions.min() < 0 or predictions.max() >= c:
            raise ValueError(f"predictions outside [0, {c})")
        self.counts += np.bincount(labels * c + predictions, minlength=c * c).reshape(
            c, c
        )

    def __iadd__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ValueError("cannot merge matrices of different class counts")
        self.counts += other.counts
        return self

    def overall_accuracy(self):
        """Trace over total; None when nothing was counted."""
        t = self.total
        if t == 0:
            return None
        return float(np.trace(self.counts) / t)

    def average_accuracy(self):
        """Mean per-class recall over classes present in the reference."""
        row = self.counts.sum(axis=1)
        present = row > 0
        if not present.any():
            return None
        recall = np.diag(self.counts)[present] / row[present]
        return float(recall.mean())

    def kappa(self):
        """Chance-corrected agreement (p_o - p_e) / (1 - p_e)."""
        t = self.total
        if t == 0:
            return None
        p_o = np.trace(self.counts) / t
        row = self.counts.sum(axis=1) / t
        col = self.counts.sum(axis=0) / t
        p_e = float(row @ col)
        if p_e == 1.0:
            # Everything in one (class, class) cell: perfect trivial agreement.
            return 1.0 if p_o == 1.0 else 0.0
        return float((p_o - p_e) / (1.0 - p_e))

    def f1_per_class(self) -> np.ndarray:
        """Per-class 2PR/(P+R); NaN for classes absent from both maps."""
        diag = np.diag(self.counts).astype(np.float64)
        row = self.counts.sum(axis=1).astype(np.float64)
        col = self.counts.sum(axis=0).astype(np.float64)
        f1 = np.full(self.num_classes, np.nan)
        for c in range(self.num_classes):
            if row[c] == 0 and col[c] == 0:
                continue
            precision = diag[c] / col[c] if col[c] > 0 else 0.0
            recall = diag[c] / row[c] if row[c] > 0 else 0.0
            f1[c] = (
                2 * precision * recall / (precision + recall)
                if precision + recall > 0
                else 0.0
            )
        return f1

    def mean_f1(self):
        f1 = self.f1_per_class()
        if np.all(np.isnan(f1)):
            return None
        return float(np.nanmean(f1))


@dataclass
class MetricsBundle:
    """Metrics of one evaluation, plus the matrix they came from."""

    confusion: ConfusionMatrix
    overall_accuracy: float | None
    average_accuracy: float | None
    kappa: float | None
    f1: np.ndarray
    mean_f1: float | None

    @classmethod
    def from_confusion(cls, cm: ConfusionMatrix) -> "MetricsBundle":
        return cls(
            confusion=cm,
            overall_accuracy=cm.overall_accuracy(),
            average_accuracy=cm.average_accuracy(),
            kappa=cm.kappa(),
            f1=cm.f1_per_class(),
            mean_f1=cm.mean_f1(),
        )


def _fmt(value) -> str:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return "-"
    return f"{value:.4f}"


def format_report(bundle: MetricsBundle, size=None) -> str:
    """Human-readable block: per-class F1 then the aggregate numbers."""
    out = io.StringIO()
    if size is not None:
        out.write(f"patch size: {size}\n")
    out.write(f"pixels counted: {bundle.confusion.total}\n")
    for c, f1 in enumerate(bundle.f1):
        out.write(f"  class {c} F1: {_fmt(f1)}\n")
    out.write(f"overall accuracy: {_fmt(bundle.overall_accuracy)}\n")
    out.write(f"average accuracy: {_fmt(bundle.average_accuracy)}\n")
    out.write(f"kappa: {_fmt(bundle.kappa)}\n")
    out.write(f"mean F1: {_fmt(bundle.mean_f1)}\n")
    return out.getvalue()


def metrics_csv(bundles: dict) -> str:
    """CSV with one row per patch size: per-class F1 columns then OA/AA/kappa."""
    if not bundles:
        return ""
    num_classes = next(iter(bundles.values())).confusion.num_classes
    header = ["size"] + [f"f1_class{c}" for c in range(num_classes)]
    header += ["overall_accuracy", "average_accuracy", "kappa", "mean_f1"]
    lines = [",".join(header)]
    for size in sorted(bundles):
        b = bundles[size]
        row = [str(size)]
        row += [_fmt(v) for v in b.f1]
        row += [
            _fmt(b.overall_accuracy),
            _fmt(b.average_accuracy),
            _fmt(b.kappa),
            _fmt(b.mean_f1),
        ]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"
