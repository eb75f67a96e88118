"""Ranking metrics for scored binary predictions.

Ties are handled by threshold semantics: items sharing a score are ranked
together (AP) or compared as half a win (ROC AUC).
"""

from __future__ import annotations

import numpy as np


def _check(scores, labels):
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} differ in length")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 or 1")
    return scores, labels.astype(bool)


def average_precision(scores, labels) -> float:
    """Sum over distinct thresholds of (recall gain) x (precision)."""
    scores, labels = _check(scores, labels)
    n_pos = labels.sum()
    if n_pos == 0:
        raise ValueError("average_precision: no positive labels")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    # last index of every tie group
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp_at, n_at = tp[ends], ends + 1
    gain = np.diff(np.r_[0, tp_at])
    return float(np.sum(gain * (tp_at / n_at)) / n_pos)


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    starts = np.r_[0, np.flatnonzero(xs[1:] != xs[:-1]) + 1]
    ends = np.r_[starts[1:], len(xs)]
    avg = (starts + ends + 1) / 2.0
    ranks = np.empty(len(x))
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def roc_auc(scores, labels) -> float:
    """Mann-Whitney estimate of P(score_pos > score_neg), ties counted 1/2."""
    scores, labels = _check(scores, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc: needs both positive and negative labels")
    ranks = _average_ranks(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))
