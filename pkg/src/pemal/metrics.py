"""Binary-classification metrics with exact tie handling.

``roc_auc`` is the Mann-Whitney statistic: over all (positive, negative)
pairs, a pair scores 1 when the positive outranks the negative, 0.5 on a
tie.  It is computed from integer pair counts so it matches a brute-force
O(n^2) enumeration bit for bit.

Low-false-positive operation matters more than global ranking for malware
screening, so alongside full AUC the report carries two readings of the
ROC restricted to FPR <= 1%: the best achievable TPR in that region, and
the partial AUC standardized to [0, 1] (McClish correction: 0.5 = chance,
1.0 = perfect) so it is comparable across caps.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DegenerateLabels, DimensionMismatch
from .validation import as_scores

__all__ = [
    "MetricsReport", "confusion", "accuracy", "roc_auc", "roc_points",
    "tpr_at_fpr", "partial_auc", "compute_report",
]

DEFAULT_THRESHOLD = 0.5
DEFAULT_FPR_CAP = 0.01


@dataclass
class MetricsReport:
    """One experiment's metrics; confusion-based entries use ``threshold``."""

    acc: float
    auc: float
    tpr_at_1pct_fpr: float
    partial_auc_1pct: float
    precision: float
    recall: float
    f1: float
    threshold: float = DEFAULT_THRESHOLD

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


def _check_pair(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = as_scores(scores)
    labels = np.asarray(labels)
    if labels.shape != scores.shape:
        raise DimensionMismatch(
            f"scores and labels differ in length: {scores.shape[0]} vs {labels.shape[0]}")
    return scores, labels


def confusion(scores, labels, threshold: float = DEFAULT_THRESHOLD) -> tuple[int, int, int, int]:
    """(TP, FP, TN, FN) with score >= threshold predicting malicious."""
    scores, labels = _check_pair(scores, labels)
    predicted = scores >= threshold
    actual = labels == 1
    tp = int(np.sum(predicted & actual))
    fp = int(np.sum(predicted & ~actual))
    tn = int(np.sum(~predicted & ~actual))
    fn = int(np.sum(~predicted & actual))
    return tp, fp, tn, fn


def accuracy(scores, labels, threshold: float = DEFAULT_THRESHOLD) -> float:
    tp, fp, tn, fn = confusion(scores, labels, threshold)
    total = tp + fp + tn + fn
    return (tp + tn) / total if total else 0.0


def _require_both_classes(labels) -> tuple[int, int]:
    n_pos = int(np.sum(labels == 1))
    n_neg = int(labels.shape[0] - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("need at least one positive and one negative label")
    return n_pos, n_neg


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with ties credited 0.5, exact up to one final division."""
    scores, labels = _check_pair(scores, labels)
    n_pos, n_neg = _require_both_classes(labels)
    order = np.argsort(scores, kind="stable")
    sorted_labels = (labels[order] == 1)
    sorted_scores = scores[order]
    # Twice the pair credit stays integral: 2*#(pos > neg) + #(pos == neg).
    twice_credit = 0
    neg_below = 0
    i = 0
    n = scores.shape[0]
    while i < n:
        j = i
        while j < n and sorted_scores[j] == sorted_scores[i]:
            j += 1
        pos_here = int(np.sum(sorted_labels[i:j]))
        neg_here = (j - i) - pos_here
        twice_credit += pos_here * (2 * neg_below + neg_here)
        neg_below += neg_here
        i = j
    return twice_credit / (2 * n_pos * n_neg)


def roc_points(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """ROC polyline vertices (FPR, TPR), from (0, 0) to (1, 1), thresholds descending."""
    scores, labels = _check_pair(scores, labels)
    n_pos, n_neg = _require_both_classes(labels)
    order = np.argsort(-scores, kind="stable")
    sorted_labels = (labels[order] == 1)
    sorted_scores = scores[order]
    distinct = np.nonzero(np.diff(sorted_scores))[0]          # ends of tie groups
    ends = np.concatenate([distinct + 1, [scores.shape[0]]])
    tp_cum = np.cumsum(sorted_labels)[ends - 1]
    fp_cum = ends - tp_cum
    fpr = np.concatenate([[0.0], fp_cum / n_neg])
    tpr = np.concatenate([[0.0], tp_cum / n_pos])
    return fpr, tpr


def tpr_at_fpr(scores, labels, fpr_cap: float = DEFAULT_FPR_CAP) -> float:
    """Highest TPR over thresholds whose FPR does not exceed ``fpr_cap``."""
    fpr, tpr = roc_points(scores, labels)
    eligible = tpr[fpr <= fpr_cap]
    return float(eligible.max()) if eligible.size else 0.0


def partial_auc(scores, labels, fpr_cap: float = DEFAULT_FPR_CAP) -> float:
    """Standardized partial AUC over FPR in [0, cap]: 0.5 = chance, 1.0 = perfect."""
    if not 0.0 < fpr_cap <= 1.0:
        raise ValueError(f"fpr_cap must be in (0, 1], got {fpr_cap}")
    fpr, tpr = roc_points(scores, labels)
    area = 0.0
    for i in range(1, fpr.shape[0]):
        x0, y0, x1, y1 = fpr[i - 1], tpr[i - 1], fpr[i], tpr[i]
        if x1 <= x0:
            continue
        if x1 <= fpr_cap:
            area += (x1 - x0) * (y0 + y1) / 2.0
        elif x0 < fpr_cap:
            yc = y0 + (y1 - y0) * (fpr_cap - x0) / (x1 - x0)
            area += (fpr_cap - x0) * (y0 + yc) / 2.0
            break
        else:
            break
    min_area = 0.5 * fpr_cap * fpr_cap
    max_area = fpr_cap
    return 0.5 * (1.0 + (area - min_area) / (max_area - min_area))


def compute_report(scores, labels, threshold: float = DEFAULT_THRESHOLD,
                   fpr_cap: float = DEFAULT_FPR_CAP) -> MetricsReport:
    """Full metrics bundle for one evaluation."""
    tp, fp, tn, fn = confusion(scores, labels, threshold)
    total = tp + fp + tn + fn
    acc = (tp + tn) / total if total else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return MetricsReport(
        acc=acc,
        auc=roc_auc(scores, labels),
        tpr_at_1pct_fpr=tpr_at_fpr(scores, labels, fpr_cap),
        partial_auc_1pct=partial_auc(scores, labels, fpr_cap),
        precision=precision,
        recall=recall,
        f1=f1,
        threshold=threshold,
    )
