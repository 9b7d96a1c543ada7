"""ROC-AUC (Mann-Whitney form) and summary statistics."""

from __future__ import annotations

import math

import numpy as np
from scipy.stats import rankdata


class AUCUndefinedError(ValueError):
    pass


def _validate(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 1 or s.shape != y.shape:
        raise ValueError(f"scores {s.shape} and labels {y.shape} must be equal-length vectors")
    if np.isnan(s).any():
        raise ValueError("scores contain NaN")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return s, y.astype(bool)


def pair_counts(scores, labels) -> tuple[int, int, int, int]:
    """Return ``(concordant, tied, n_pos, n_neg)`` over all positive/negative pairs.

    Runs in O(n log n): scores are sorted once and each tie group contributes
    ``pos_in_group * neg_strictly_below`` concordant pairs and
    ``pos_in_group * neg_in_group`` tied pairs.
    """
    s, y = _validate(scores, labels)
    order = np.argsort(s, kind="stable")
    s, y = s[order], y[order]
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]]) if s.size else np.array([], int)
    pos = np.add.reduceat(y.astype(np.int64), starts) if s.size else np.array([], np.int64)
    size = np.diff(np.r_[starts, s.size])
    neg = size - pos
    neg_below = np.cumsum(neg) - neg
    concordant = int(np.dot(pos, neg_below))
    tied = int(np.dot(pos, neg))
    return concordant, tied, int(y.sum()), int((~y).sum())


def roc_auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative, ties counted half."""
    concordant, tied, n_pos, n_neg = pair_counts(scores, labels)
    if n_pos == 0 or n_neg == 0:
        raise AUCUndefinedError("AUC undefined: labels contain a single class")
    # one division of exact integers
    return (2 * concordant + tied) / (2 * n_pos * n_neg)


def roc_auc_rows(scores: np.ndarray, labels) -> np.ndarray:
    """Row-wise ROC-AUC of a ``(K, M)`` score matrix against one label vector.

    Uses average ranks, so the numerator ``U = concordant + tied / 2`` is an
    exact half-integer and the result equals :func:`roc_auc` bitwise.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2:
        raise ValueError("scores must be a 2-D matrix")
    _, y = _validate(s[0] if len(s) else np.zeros(0), labels)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise AUCUndefinedError("AUC undefined: labels contain a single class")
    if np.isnan(s).any():
        raise ValueError("scores contain NaN")
    ranks = rankdata(s, axis=1)
    u = ranks[:, y].sum(axis=1) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def mean_std(values) -> tuple[float, float]:
    """Mean and sample standard deviation (n - 1); std is 0 for a single value."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("mean_std of an empty sequence")
    # shifted by the first value: exact for constant samples, less cancellation otherwise
    dev = v - v[0]
    mean = float(v[0] + dev.mean())
    if v.size < 2:
        return mean, 0.0
    centred = dev - dev.mean()
    return mean, float(math.sqrt((centred ** 2).sum() / (v.size - 1)))
