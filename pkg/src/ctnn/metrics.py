"""Pixel-level segmentation metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .raster import DimensionMismatchError, LabelRaster


@dataclass(frozen=True)
class MetricsReport:
    confusion: np.ndarray  # confusion[t, p]: truth t predicted as p
    precision: np.ndarray
    recall: np.ndarray
    f_score: np.ndarray
    accuracy: float
    average_f: float
    micro_f: float

    @property
    def n_pixels(self) -> int:
        return int(self.confusion.sum())

    def to_dict(self) -> dict:
        return {
            "n_pixels": self.n_pixels,
            "accuracy": self.accuracy,
            "average_f": self.average_f,
            "micro_f": self.micro_f,
            "per_class": [
                {"class": c, "precision": float(p), "recall": float(r), "f_score": float(f)}
                for c, (p, r, f) in enumerate(zip(self.precision, self.recall, self.f_score))
            ],
            "confusion": self.confusion.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def table(self) -> str:
        rows = [("class", "precision", "recall", "F")]
        for c in range(len(self.precision)):
            rows.append((str(c), f"{self.precision[c]:.4f}", f"{self.recall[c]:.4f}", f"{self.f_score[c]:.4f}"))
        rows.append(("avg F", "", "", f"{self.average_f:.4f}"))
        rows.append(("accuracy", "", "", f"{self.accuracy:.4f}"))
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        lines = ["  ".join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(r, widths))) for r in rows]
        return "\n".join(lines) + "\n"


def _safe_div(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros_like(a, dtype=np.float64)
    np.divide(a, b, out=out, where=b > 0)
    return out


def confusion_matrix(pred: LabelRaster, truth: LabelRaster) -> np.ndarray:
    """Counts over pixels valid in both rasters."""
    if pred.shape != truth.shape:
        raise DimensionMismatchError(f"prediction {pred.shape} and truth {truth.shape} differ in shape")
    c = max(pred.n_classes, truth.n_classes)
    keep = (pred.valid & truth.valid).ravel()
    t = truth.classes.ravel()[keep]
    p = pred.classes.ravel()[keep]
    return np.bincount(t * c + p, minlength=c * c).reshape(c, c)


def report_from_confusion(cm: np.ndarray) -> MetricsReport:
    cm = np.asarray(cm, dtype=np.int64)
    tp = np.diag(cm).astype(np.float64)
    precision = _safe_div(tp, cm.sum(axis=0).astype(np.float64))
    recall = _safe_div(tp, cm.sum(axis=1).astype(np.float64))
    f = _safe_div(2 * precision * recall, precision + recall)
    total = cm.sum()
    acc = float(tp.sum() / total) if total else 0.0
    # micro F equals accuracy for single-label classification
    return MetricsReport(cm, precision, recall, f, acc, float(f.mean()), acc)


def evaluate(pred: LabelRaster, truth: LabelRaster) -> MetricsReport:
    return report_from_confusion(confusion_matrix(pred, truth))
