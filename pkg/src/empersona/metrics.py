"""Evaluation primitives: diversity, correlation, classification scores.

Correlations return None instead of raising when an input has zero
variance; callers surface that as an undefined metric rather than a
number. Everything here is plain float64 numpy so results can be
compared against external references at tight tolerance.
"""

from __future__ import annotations

import numpy as np


def distinct_n(texts, n: int) -> float:
    """Unique n-grams over total n-grams, pooled across all texts."""
    if n < 1:
        raise ValueError("n must be >= 1")
    total = 0
    seen = set()
    for text in texts:
        words = text.split() if isinstance(text, str) else list(text)
        for i in range(len(words) - n + 1):
            seen.add(tuple(words[i:i + n]))
            total += 1
    return len(seen) / total if total else 0.0


def pearson(x, y) -> float | None:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"pearson expects equal-length vectors, got {x.shape} / {y.shape}")
    if x.size < 2:
        return None
    dx = x - x.mean()
    dy = y - y.mean()
    sx = float(np.sqrt((dx * dx).sum()))
    sy = float(np.sqrt((dy * dy).sum()))
    if sx == 0.0 or sy == 0.0:
        return None  # correlation undefined for a constant input
    return float((dx * dy).sum() / (sx * sy))


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=np.float64)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0  # 1-based average rank
        i = j + 1
    return ranks


def spearman(x, y) -> float | None:
    """Rank correlation with average ranks on ties."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"spearman expects equal-length vectors, got {x.shape} / {y.shape}")
    if x.size < 2:
        return None
    return pearson(_average_ranks(x), _average_ranks(y))


def classification_metrics(y_true, y_pred, n_classes: int | None = None) -> dict:
    """Accuracy, balanced accuracy and macro-F1.

    Balanced accuracy averages recall over the classes that occur in
    ``y_true``; macro-F1 averages over the label set (``range(n_classes)``
    when given, otherwise the union of observed labels), scoring 0 for
    degenerate classes.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1 or y_true.size == 0:
        raise ValueError("classification_metrics expects two equal non-empty label vectors")
    if n_classes is None:
        labels = sorted(set(y_true.tolist()) | set(y_pred.tolist()))
    else:
        labels = list(range(n_classes))
    accuracy = float((y_true == y_pred).mean())
    recalls = []
    f1s = []
    for c in labels:
        tp = int(((y_true == c) & (y_pred == c)).sum())
        fn = int(((y_true == c) & (y_pred != c)).sum())
        fp = int(((y_true != c) & (y_pred == c)).sum())
        if tp + fn > 0:
            recalls.append(tp / (tp + fn))
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return {
        "accuracy": accuracy,
        "balanced_accuracy": float(np.mean(recalls)) if recalls else 0.0,
        "f1": float(np.mean(f1s)) if f1s else 0.0,
    }
