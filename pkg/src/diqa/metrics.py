"""Accuracy, confusion matrices, ROC/AUC and the two-rater Jaccard matrix."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np


def _as_labels(values, name):
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == np.round(arr)):
            raise ValueError(f"{name} must hold integer class indices")
        arr = arr.astype(np.int64)
    return arr.astype(np.int64)


def _check_range(arr, k, name):
    bad = arr[(arr < 0) | (arr >= k)]
    if bad.size:
        raise ValueError(f"{name} contains classes outside [0, {k}): {sorted(set(bad.tolist()))}")


def accuracy(predictions, labels) -> float:
    p = np.asarray(predictions)
    y = np.asarray(labels)
    if p.shape != y.shape:
        raise ValueError(f"predictions {p.shape} and labels {y.shape} differ in length")
    if p.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.count_nonzero(p == y) / p.size)


# ---------------------------------------------------------------------------
# confusion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # (K, K) int64; row = true class, column = prediction

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def empty_rows(self) -> list[int]:
        """True classes with no samples; their normalized rows are all zero."""
        return [i for i, s in enumerate(self.counts.sum(axis=1)) if s == 0]

    @property
    def normalized(self) -> np.ndarray:
        sums = self.counts.sum(axis=1, keepdims=True)
        return np.divide(self.counts, sums, out=np.zeros(self.counts.shape), where=sums > 0)

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total)


def confusion(predictions, labels, k: int) -> ConfusionMatrix:
    p = _as_labels(predictions, "predictions")
    y = _as_labels(labels, "labels")
    if p.shape != y.shape:
        raise ValueError(f"predictions ({p.size}) and labels ({y.size}) differ in length")
    _check_range(p, k, "predictions")
    _check_range(y, k, "labels")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (y, p), 1)
    return ConfusionMatrix(counts)


# ---------------------------------------------------------------------------
# ROC
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RocCurve:
    """ROC points from a descending threshold sweep.

    ``thresholds[0]`` is +inf (nothing predicted positive). Point i classifies
    ``score >= thresholds[i]`` as positive. ``auc_exact`` is the trapezoidal
    area as an exact rational, so symmetries such as negation duality hold
    without rounding; ``auc`` is its nearest float.
    """

    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc_exact: Fraction

    @property
    def auc(self) -> float:
        return float(self.auc_exact)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("threshold", "fpr", "tpr"))
        for t, f, r in zip(self.thresholds, self.fpr, self.tpr):
            w.writerow((repr(float(t)), repr(float(f)), repr(float(r))))
        return buf.getvalue()


def roc_binary(scores, labels) -> RocCurve:
    s = np.asarray(scores, dtype=np.float64)
    y = _as_labels(labels, "labels")
    if s.shape != y.shape:
        raise ValueError(f"scores ({s.size}) and labels ({y.size}) differ in length")
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    _check_range(y, 2, "labels")
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError(f"AUC undefined: labels contain a single class ({n_pos} positive, {n_neg} negative)")

    order = np.argsort(-s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    tp = np.r_[0, np.cumsum(y_sorted)[ends]].astype(np.int64)
    fp = np.r_[0, (ends + 1) - tp[1:]].astype(np.int64)
    thresholds = np.r_[np.inf, s_sorted[ends]]

    twice_area = sum(int(fp[i] - fp[i - 1]) * int(tp[i] + tp[i - 1]) for i in range(1, len(tp)))
    auc = Fraction(twice_area, 2 * n_pos * n_neg)
    return RocCurve(thresholds, fp / n_neg, tp / n_pos, auc)


def pairwise_auc(scores, labels) -> float:
    """Brute-force P(s+ > s-) + P(s+ = s-) / 2 over all positive/negative pairs."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    pos, neg = s[y == 1], s[y == 0]
    if not len(pos) or not len(neg):
        raise ValueError("AUC undefined: labels contain a single class")
    diff = pos[:, None] - neg[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size)


@dataclass(frozen=True)
class MulticlassRoc:
    curves: list[RocCurve]

    @property
    def auc_per_class(self) -> list[float]:
        return [c.auc for c in self.curves]

    @property
    def auc_macro(self) -> float:
        return float(sum(c.auc_exact for c in self.curves) / len(self.curves))


def roc_multiclass(probabilities, labels) -> MulticlassRoc:
    """One-vs-rest curves scored by each class's probability, macro-averaged."""
    p = np.asarray(probabilities, dtype=np.float64)
    y = _as_labels(labels, "labels")
    if p.ndim != 2 or p.shape[0] != y.size:
        raise ValueError(f"probabilities {p.shape} do not match {y.size} labels")
    k = p.shape[1]
    _check_range(y, k, "labels")
    if y.size and np.abs(p.sum(axis=1) - 1).max() > 1e-6:
        raise ValueError("probability rows must sum to 1 within 1e-6")
    missing = [c for c in range(k) if not np.any(y == c)]
    if missing:
        raise ValueError(f"AUC undefined: classes {missing} are absent from the labels")
    return MulticlassRoc([roc_binary(p[:, c], (y == c).astype(np.int64)) for c in range(k)])


# ---------------------------------------------------------------------------
# rater agreement
# ---------------------------------------------------------------------------


def jaccard_matrix(rater_a, rater_b, k: int) -> np.ndarray:
    """Entry (i, j) = |A_i & B_j| / |A_i | B_j|, with 0/0 taken as 0."""
    a = _as_labels(rater_a, "rater_a")
    b = _as_labels(rater_b, "rater_b")
    if a.shape != b.shape:
        raise ValueError(f"rater label lists differ in length: {a.size} vs {b.size}")
    _check_range(a, k, "rater_a")
    _check_range(b, k, "rater_b")
    inter = np.zeros((k, k), dtype=np.int64)
    np.add.at(inter, (a, b), 1)
    size_a = np.bincount(a, minlength=k)
    size_b = np.bincount(b, minlength=k)
    union = size_a[:, None] + size_b[None, :] - inter
    return np.divide(inter, union, out=np.zeros((k, k)), where=union > 0)


# ---------------------------------------------------------------------------
# bundles
# ---------------------------------------------------------------------------


@dataclass
class MetricsBundle:
    accuracy: float
    confusion: ConfusionMatrix
    auc: float | None = None
    auc_per_class: list[float] | None = None
    auc_macro: float | None = None
    jaccard: np.ndarray | None = None
    roc: list[RocCurve] | None = None

    def to_dict(self) -> dict:
        out = {
            "accuracy": self.accuracy,
            "confusion_counts": self.confusion.counts.tolist(),
            "confusion_normalized": self.confusion.normalized.tolist(),
        }
        if self.confusion.k == 2:
            out["auc"] = self.auc
        else:
            out["auc_per_class"] = self.auc_per_class
            out["auc_macro"] = self.auc_macro
        if self.jaccard is not None:
            out["jaccard"] = self.jaccard.tolist()
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"


def classification_metrics(probabilities, labels) -> MetricsBundle:
    """Bundle for a K-way classifier. AUC fields stay None when a class is missing."""
    p = np.asarray(probabilities, dtype=np.float64)
    y = _as_labels(labels, "labels")
    k = p.shape[1]
    pred = p.argmax(axis=1)
    bundle = MetricsBundle(accuracy(pred, y), confusion(pred, y, k))
    if all(np.any(y == c) for c in range(k)):
        if k == 2:
            curve = roc_binary(p[:, 1], y)
            bundle.auc, bundle.roc = curve.auc, [curve]
        else:
            multi = roc_multiclass(p, y)
            bundle.auc_per_class, bundle.auc_macro, bundle.roc = multi.auc_per_class, multi.auc_macro, multi.curves
    return bundle


def write_json(obj, path) -> Path:
    path = Path(path)
    text = obj.to_json() if hasattr(obj, "to_json") else json.dumps(obj, indent=2) + "\n"
    path.write_text(text, encoding="utf-8")
    return path


def majority_baseline(counts) -> float:
    """Accuracy of always predicting the largest class."""
    total = sum(counts)
    if total == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return max(counts) / total


__all__ = [
    "ConfusionMatrix", "MetricsBundle", "MulticlassRoc", "RocCurve", "accuracy", "classification_metrics",
    "confusion", "jaccard_matrix", "majority_baseline", "pairwise_auc", "roc_binary", "roc_multiclass",
    "write_json",
]
