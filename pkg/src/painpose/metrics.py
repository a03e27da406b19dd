"""Bag-level classification metrics."""

from __future__ import annotations

import numpy as np


def confusion(y_true, y_pred) -> np.ndarray:
    """2x2 counts, rows = truth (0 no-pain, 1 pain), columns = prediction."""
    c = np.zeros((2, 2), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        c[int(t), int(p)] += 1
    return c


def f1_unweighted(conf) -> float:
    """Unweighted mean of the two per-class F1 scores (0 for an empty class)."""
    c = np.asarray(conf, dtype=np.float64)
    if c.shape != (2, 2) or np.any(c < 0):
        raise ValueError("confusion must be a non-negative 2x2 matrix")
    scores = []
    for k in (0, 1):
        tp = c[k, k]
        denom = 2 * tp + (c[k].sum() - tp) + (c[:, k].sum() - tp)
        scores.append(0.0 if denom == 0 else 2 * tp / denom)
    return float(np.mean(scores))


def accuracy(conf) -> float:
    c = np.asarray(conf, dtype=np.float64)
    total = c.sum()
    return float(np.trace(c) / total) if total else 0.0
