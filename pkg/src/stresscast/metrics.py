"""Scoring metrics shared by the forecaster and the metamodel."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .errors import ShapeError, UndefinedAUCError


def smape(actual, predicted) -> float:
    """Symmetric MAPE, 200-factor form: (200/h) * sum |y - yhat| / (|y| + |yhat|).

    Bounded in [0, 200]. A step where actual and predicted are both exactly
    zero contributes 0 by convention.
    """
    a = np.asarray(actual, dtype=np.float64)
    p = np.asarray(predicted, dtype=np.float64)
    if a.shape != p.shape or a.ndim != 1 or a.size < 1:
        raise ShapeError(f"smape needs equal-length 1-D vectors, got {a.shape} and {p.shape}")
    denom = np.abs(a) + np.abs(p)
    num = np.abs(a - p)
    terms = np.divide(num, denom, out=np.zeros_like(num), where=denom > 0)
    return float(200.0 * terms.mean())


def auc(labels, scores) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic.

    Equals the fraction of (positive, negative) pairs where the positive
    outscores the negative, ties counted as half. Raises UndefinedAUCError
    when only one class is present.
    """
    y = np.asarray(labels)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape or y.ndim != 1:
        raise ShapeError(f"auc needs equal-length 1-D vectors, got {y.shape} and {s.shape}")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos + n_neg != y.size:
        raise ValueError("labels must be 0/1")
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError(f"AUC undefined with {n_pos} positives and {n_neg} negatives")
    ranks = rankdata(s, method="average")
    u = float(np.sum(ranks[y == 1])) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def log_loss(labels, probabilities, eps: float = 1e-12) -> float:
    """Mean binary cross-entropy with probability clipping."""
    y = np.asarray(labels, dtype=np.float64)
    p = np.clip(np.asarray(probabilities, dtype=np.float64), eps, 1.0 - eps)
    if y.shape != p.shape or y.ndim != 1:
        raise ShapeError(f"log_loss needs equal-length 1-D vectors, got {y.shape} and {p.shape}")
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))
