"""Evaluation measures: MAE, rank-based AUC, count-weighted multiclass AUC,
and balanced accuracy."""

from __future__ import annotations

import numpy as np

from .core import DataError


def mae(y_true, y_pred) -> float:
    """Mean absolute error."""
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape:
        raise DataError("length mismatch")
    if y_true.size == 0:
        raise DataError("empty input")
    if not (np.all(np.isfinite(y_true)) and np.all(np.isfinite(y_pred))):
        raise DataError("non-finite input")
    return float(np.mean(np.abs(y_true - y_pred)))


def auc_one_vs_rest(scores, is_class) -> float:
    """Rank-based AUC: P(score_pos > score_neg) + 0.5 * P(equal).

    Computed from midranks so tie groups contribute exactly one half.
    Raises if either class is absent.
    """
    scores = np.asarray(scores, dtype=float)
    is_class = np.asarray(is_class, dtype=bool)
    if scores.shape != is_class.shape:
        raise DataError("length mismatch")
    n_pos = int(is_class.sum())
    n_neg = int((~is_class).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC undefined: one class absent")
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(scores.shape[0])
    i = 0
    while i < scores.shape[0]:
        j = i
        while j + 1 < scores.shape[0] and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    rank_sum_pos = float(ranks[is_class].sum())
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def mauc(scores, labels, weighted: bool = True) -> float:
    """Multiclass AUC: (1/N) * sum_c N_c * AUC_c over one-vs-rest AUCs.

    weighted=False averages the per-class AUCs without the class-count
    weights (exposed as a variant, not the reference formula).
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.ndim != 2 or scores.shape[0] != labels.shape[0]:
        raise DataError("scores must be (N, C) aligned with labels")
    classes = np.unique(labels)
    n = labels.shape[0]
    if np.any(classes < 0) or np.any(classes >= scores.shape[1]):
        raise DataError("label outside score columns")
    if classes.shape[0] != scores.shape[1]:
        raise DataError("scored class with zero samples")
    per_class = []
    counts = []
    for c in classes:
        is_c = labels == c
        per_class.append(auc_one_vs_rest(scores[:, int(c)], is_c))
        counts.append(int(is_c.sum()))
    per_class = np.array(per_class)
    counts = np.array(counts, dtype=float)
    if weighted:
        return float(np.sum(counts * per_class) / n)
    return float(np.mean(per_class))


def balanced_accuracy(y_pred, y_true) -> float:
    """Unweighted mean of per-class recalls over classes present in y_true."""
    y_pred = np.asarray(y_pred)
    y_true = np.asarray(y_true)
    if y_pred.shape != y_true.shape:
        raise DataError("length mismatch")
    if y_true.size == 0:
        raise DataError("empty input")
    recalls = []
    for c in np.unique(y_true):
        mask = y_true == c
        recalls.append(float(np.mean(y_pred[mask] == c)))
    return float(np.mean(recalls))
