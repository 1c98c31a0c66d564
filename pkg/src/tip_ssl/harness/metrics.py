"""Accuracy, rank-based AUC and RMSE."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def accuracy(probs: np.ndarray, labels: np.ndarray) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("accuracy of an empty set")
    return float(np.mean(np.argmax(probs, axis=1) == labels))


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney AUC with midranks for tied scores.

    Equals the fraction of (positive, negative) pairs ranked correctly, ties
    counting one half.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def rmse(pred: np.ndarray, target: np.ndarray, mask: np.ndarray | None = None) -> float | None:
    """RMSE over ``mask``-selected entries; ``None`` if nothing is selected."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    sel = np.ones(pred.shape, bool) if mask is None else np.asarray(mask).astype(bool)
    if not sel.any():
        return None
    d = pred[sel] - target[sel]
    return float(np.sqrt(np.mean(d * d)))
