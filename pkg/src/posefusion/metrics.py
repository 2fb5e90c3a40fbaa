"""Precision/recall, average precision and macro F1 for binary scores."""

from __future__ import annotations

import numpy as np

from .errors import MetricUndefinedError


def _check(scores, labels):
    scores = np.asarray(scores, dtype=float).reshape(-1)
    labels = np.asarray(labels, dtype=int).reshape(-1)
    if len(scores) != len(labels) or len(scores) == 0:
        raise MetricUndefinedError("need a nonempty list of (score, label) pairs")
    if not np.isin(labels, (0, 1)).all():
        raise MetricUndefinedError("labels must be 0 or 1")
    if labels.min() == labels.max():
        raise MetricUndefinedError("both classes must be present")
    return scores, labels


def pr_curve(scores, labels):
    """(precision, recall) at every distinct score, thresholds descending.

    A sample is predicted positive when its score is >= the threshold.
    Returns (precision, recall, thresholds) arrays.
    """
    scores, labels = _check(scores, labels)
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    # last index of each run of equal scores
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp, fp = tp[last], fp[last]
    precision = tp / (tp + fp)
    recall = tp / y.sum()
    return precision, recall, s[last]


def average_precision(scores, labels) -> float:
    """All-points AP: sum of recall increments times precision."""
    precision, recall, _ = pr_curve(scores, labels)
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def f1_per_class(pred, labels) -> np.ndarray:
    pred = np.asarray(pred, dtype=int)
    labels = np.asarray(labels, dtype=int)
    out = np.zeros(2)
    for c in (0, 1):
        tp = np.sum((pred == c) & (labels == c))
        denom = np.sum(pred == c) + np.sum(labels == c)
        out[c] = 2.0 * tp / denom if denom else 0.0
    return out


def macro_f1(scores, labels, threshold: float = 0.5) -> float:
    """Unweighted mean of the two per-class F1 scores at ``threshold``."""
    scores, labels = _check(scores, labels)
    pred = (scores >= threshold).astype(int)
    return float(f1_per_class(pred, labels).mean())
