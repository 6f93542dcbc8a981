"""Posterior-predictive outputs and interpretability readouts.

All functions here are read-only over a fitted ModelState and safe to call
concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DataError, ModelState
from .longitudinal import DIAGNOSIS_LABELS, WindowMeta


def predict_view(
    state: ModelState, sample_indices, view: int, destandardize: bool = True
) -> tuple[np.ndarray, np.ndarray]:
    """Predictive means and variances for the given samples of one view.

    mean = <z_n><W>^T; the per-entry variance folds in the projection-row
    covariance, the latent covariance and the noise floor 1/<tau>. Values are
    mapped back to original units when the state carries standardization
    metadata.
    """
    idx = np.atleast_1d(np.asarray(sample_indices, dtype=int))
    if view < 0 or view >= len(state.specs):
        raise DataError(f"unknown view index {view}")
    if idx.size and (idx.min() < 0 or idx.max() >= state.n_samples):
        raise DataError("sample index out of range")
    vp = state.views[view]
    mz = state.q_z.mean[idx]  # (n, K)
    sz = state.q_z.covariance
    mw = vp.q_w.mean  # (D, K)
    means = mz @ mw.T

    # E[(z w)^2] - E[z w]^2 per entry, plus noise variance
    z_second = mz[:, :, None] * mz[:, None, :] + sz[None]  # (n, K, K)
    if vp.q_w.covariance.ndim == 3:
        w_second = mw[:, :, None] * mw[:, None, :] + vp.q_w.covariance
    else:
        w_second = mw[:, :, None] * mw[:, None, :] + vp.q_w.covariance[None]
    second = np.einsum("nkj,dkj->nd", z_second, w_second)
    e_tau = float(vp.q_tau.shape[0] / vp.q_tau.rate[0])
    variances = second - means**2 + 1.0 / e_tau

    if destandardize and state.standardizers is not None:
        std = state.standardizers
        means, variances = std.inverse_mean_var(view, means, variances)
    return means, variances


def classify_onehot(
    state: ModelState, sample_indices, view: int
) -> tuple[np.ndarray, np.ndarray]:
    """Class labels and normalized scores from an indicator view.

    Predictive means are clipped to [0, 1] and renormalized per sample
    (uniform if all-zero); ties break toward the lowest class index.
    """
    if state.specs[view].kind != "indicator":
        raise DataError(f"view {state.specs[view].view_id} is not an indicator view")
    means, _ = predict_view(state, sample_indices, view, destandardize=False)
    scores = np.clip(means, 0.0, 1.0)
    totals = scores.sum(axis=1, keepdims=True)
    uniform = np.full_like(scores, 1.0 / scores.shape[1])
    scores = np.where(totals > 0, scores / np.where(totals > 0, totals, 1.0), uniform)
    labels = np.argmax(scores, axis=1)
    return labels, scores


@dataclass(frozen=True)
class RelevanceProfile:
    scores: np.ndarray
    normalization: str  # "raw" | "unit_sum"


def feature_relevance(
    state: ModelState, view: int, normalization: str = "raw", statistic: str = "inverse_gamma"
) -> RelevanceProfile:
    """Per-feature relevance of a feature-selection view.

    statistic="inverse_gamma" scores 1/<gamma_d> (larger = more relevant);
    "row_norm" scores the Euclidean norm of each projection row instead.
    """
    vp = state.views[view]
    if statistic == "inverse_gamma":
        if vp.q_gamma is None:
            raise DataError("feature selection not enabled for this view")
        scores = 1.0 / vp.q_gamma.mean
    elif statistic == "row_norm":
        scores = np.linalg.norm(vp.q_w.mean, axis=1)
    else:
        raise DataError(f"unknown relevance statistic {statistic!r}")
    if normalization == "unit_sum":
        total = scores.sum()
        scores = scores / total if total > 0 else np.full_like(scores, 1.0 / scores.size)
    elif normalization != "raw":
        raise DataError(f"unknown normalization {normalization!r}")
    return RelevanceProfile(scores, normalization)


@dataclass(frozen=True)
class FactorActivity:
    matrix: np.ndarray  # (M, K) bool
    threshold: float


def factor_activity(state: ModelState, threshold: float | None = None) -> FactorActivity:
    """Which views use which latent factor: max_d |<w_dk>| >= threshold."""
    if threshold is None:
        threshold = state.hyper.prune_threshold
    rows = [np.abs(vp.q_w.mean).max(axis=0) >= threshold for vp in state.views]
    return FactorActivity(np.stack(rows), float(threshold))


@dataclass(frozen=True)
class TrajectoryPoint:
    month: int
    value: float
    source: str  # "observed" | "imputed"
    std: float | None = None
    class_scores: np.ndarray | None = None


def _cell_lookup(meta: WindowMeta, subject: str, variable: str):
    """All (sample_row, view, col) cells covering (subject, month, variable),
    grouped by month, in fixed scan order: samples (train windows then test),
    views ascending, columns ascending. Structurally masked cells (targets of
    the forecasting scheme) are included; their posteriors carry the model's
    imputation."""
    out: dict[int, list[tuple[int, int, int]]] = {}
    for r, info in enumerate(meta.samples):
        if info.subject != subject:
            continue
        is_test = info.kind == "test"
        for v, cols in enumerate(meta.columns):
            spec = meta.specs[v]
            for c, col in enumerate(cols):
                if col.variable != variable or col.offset is None:
                    continue
                month = info.target_month + col.offset
                if month < 0:
                    continue
                if (
                    is_test
                    and spec.role != "output"
                    and month > meta.layout.test_max_input_month
                ):
                    continue
                out.setdefault(month, []).append((r, v, c))
    return out


def subject_trajectory(
    state: ModelState,
    meta: WindowMeta,
    table,
    subject: str,
    variable: str,
) -> list[TrajectoryPoint]:
    """Per-month observed/imputed values of one variable for one subject.

    Months present in the subject table report the recorded value; missing
    months (including the forecasting targets the fit never saw) report the
    posterior-predictive mean, with class scores when the variable is the
    diagnosis. Imputed months read the first covering cell in a fixed scan
    order, so duplicated window cells resolve deterministically.
    """
    if subject not in {s.subject for s in meta.samples}:
        raise DataError(f"unknown subject {subject!r}")
    if variable not in meta.catalog.names:
        raise DataError(f"unknown variable {variable!r}")
    is_diag = variable == meta.catalog.diagnosis
    cells = _cell_lookup(meta, subject, variable)
    points = []
    for month in sorted(cells):
        recorded = table.get(subject, month, variable)
        if recorded is not None:
            if is_diag:
                onehot = np.zeros(3)
                onehot[int(recorded)] = 1.0
                points.append(
                    TrajectoryPoint(month, float(recorded), "observed", None, onehot)
                )
            else:
                points.append(TrajectoryPoint(month, float(recorded), "observed"))
            continue
        row, view, col = cells[month][0]
        if is_diag:
            labels, scores = classify_onehot(state, [row], view)
            points.append(
                TrajectoryPoint(month, float(labels[0]), "imputed", None, scores[0])
            )
        else:
            means, variances = predict_view(state, [row], view)
            points.append(
                TrajectoryPoint(
                    month, float(means[0, col]), "imputed", float(np.sqrt(variances[0, col]))
                )
            )
    return points


def diagnosis_label(point: TrajectoryPoint) -> str:
    return DIAGNOSIS_LABELS[int(point.value)]
