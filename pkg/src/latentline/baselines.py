"""Comparison stack: five imputation strategies plus cross-validated ridge
and one-vs-all logistic regression.

Imputation statistics always come from the training matrix and are applied to
either set. The regularisation grid is the 11-point log grid 10^-20 .. 10^2;
ridge selects by mean fold MAE, logistic by mean fold balanced accuracy, ties
resolved toward the smaller penalty.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DataError
from .metrics import balanced_accuracy, mae

STRATEGIES = ("zero", "mean", "median", "most_frequent", "temporal")

RIDGE_GRID = 10.0 ** np.linspace(-20.0, 2.0, 11)


@dataclass(frozen=True)
class CellMeta:
    """Subject/month structure of an imputation matrix.

    subjects : per-row subject identifier.
    months : (rows, cols) month of each cell (time-independent cells may use
        any constant; they never match a "strictly earlier" query).
    variables : per-column variable identifier; columns holding the same
        variable at different months share the identifier.
    """

    subjects: np.ndarray
    months: np.ndarray
    variables: np.ndarray


def _column_mode(values: np.ndarray) -> float:
    """Most frequent observed value; ties resolved toward the smallest."""
    uniq, counts = np.unique(values, return_counts=True)
    return float(uniq[np.argmax(counts)])  # np.unique sorts, argmax takes first max


def _train_column_stats(train: np.ndarray, train_mask: np.ndarray, strategy: str) -> np.ndarray:
    cols = train.shape[1]
    stats = np.zeros(cols)
    for c in range(cols):
        obs = train[train_mask[:, c], c]
        if strategy == "zero" or obs.size == 0:
            stats[c] = 0.0
        elif strategy in ("mean", "temporal"):
            stats[c] = float(np.mean(obs))
        elif strategy == "median":
            stats[c] = float(np.median(obs))
        elif strategy == "most_frequent":
            stats[c] = _column_mode(obs)
    return stats


def impute(
    train: np.ndarray,
    train_mask: np.ndarray,
    apply_to: np.ndarray,
    apply_mask: np.ndarray,
    strategy: str,
    meta: CellMeta | None = None,
) -> np.ndarray:
    """Fill every masked-out cell of apply_to according to the strategy.

    Observed cells are preserved bit-exactly. The temporal strategy fills a
    cell with the mean of the same subject's strictly earlier observed values
    of that variable (collected from the matrix being completed), falling back
    to the train column mean; it requires meta.
    """
    if strategy not in STRATEGIES:
        raise DataError(f"unknown imputation strategy {strategy!r}")
    if strategy == "temporal" and meta is None:
        raise DataError("temporal imputation requires subject/month metadata")
    out = np.array(apply_to, dtype=float, copy=True)
    stats = _train_column_stats(train, train_mask, strategy)

    if strategy != "temporal":
        fill = np.broadcast_to(stats, out.shape)
        out[~apply_mask] = fill[~apply_mask]
        return out

    # temporal: per (subject, variable), histories of observed (month, value)
    history: dict[tuple, dict[float, float]] = {}
    rows, cols = apply_to.shape
    for r in range(rows):
        for c in range(cols):
            if apply_mask[r, c]:
                key = (meta.subjects[r], meta.variables[c])
                history.setdefault(key, {})[float(meta.months[r, c])] = float(apply_to[r, c])
    for r in range(rows):
        for c in range(cols):
            if apply_mask[r, c]:
                continue
            key = (meta.subjects[r], meta.variables[c])
            month = float(meta.months[r, c])
            earlier = [v for mo, v in history.get(key, {}).items() if mo < month]
            out[r, c] = float(np.mean(earlier)) if earlier else stats[c]
    return out


# ---------------------------------------------------------------------------
# cross-validation folds


def kfold_indices(n: int, folds: int, seed: int) -> list[np.ndarray]:
    """Deterministic shuffled K-fold split."""
    if n < folds:
        raise DataError(f"{n} samples but {folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return [perm[i::folds] for i in range(folds)]


def stratified_kfold_indices(labels: np.ndarray, folds: int, seed: int) -> list[np.ndarray]:
    """Deterministic stratified K-fold: round-robin within each class."""
    labels = np.asarray(labels)
    n = labels.shape[0]
    if n < folds:
        raise DataError(f"{n} samples but {folds} folds")
    rng = np.random.default_rng(seed)
    assignment = np.zeros(n, dtype=int)
    cursor = 0
    for c in np.unique(labels):
        idx = np.nonzero(labels == c)[0]
        idx = idx[rng.permutation(idx.shape[0])]
        for j, i in enumerate(idx):
            assignment[i] = (cursor + j) % folds
        cursor += idx.shape[0]
    return [np.nonzero(assignment == f)[0] for f in range(folds)]


class _Scaler:
    """Column z-scoring with unit scale for constant columns."""

    def __init__(self, x: np.ndarray):
        self.center = x.mean(axis=0)
        sd = x.std(axis=0, ddof=1) if x.shape[0] > 1 else np.zeros(x.shape[1])
        # ptp==0 catches bit-identical columns whose std is only fp noise
        spread = x.max(axis=0) - x.min(axis=0) if x.shape[0] else np.zeros(x.shape[1])
        self.scale = np.where((sd > 0) & (spread > 0), sd, 1.0)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return (x - self.center) / self.scale


def _ridge_solve(xs: np.ndarray, y: np.ndarray, alpha: float) -> np.ndarray:
    """Closed-form ridge weights on already standardized, centered-target data.

    Falls back to the minimum-norm solution when the penalized normal matrix
    is numerically singular (possible at the 1e-20 end of the grid).
    """
    k = xs.shape[1]
    a = xs.T @ xs + alpha * np.eye(k)
    b = xs.T @ y
    try:
        return np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(a, b, rcond=None)[0]


@dataclass
class RidgeModel:
    scaler: _Scaler
    weights: np.ndarray
    intercept: float
    alpha: float

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.scaler(x) @ self.weights + self.intercept


def ridge_fit_cv(x: np.ndarray, y: np.ndarray, folds: int = 10, seed: int = 0) -> RidgeModel:
    """Ridge regression with the 11-point log grid selected by 10-fold MAE.

    The design is standardized and the intercept (target mean) is left
    unpenalized. Grid ties go to the smaller penalty.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[0] != y.shape[0]:
        raise DataError("X/y length mismatch")
    fold_idx = kfold_indices(x.shape[0], folds, seed)
    cv_mae = np.zeros(RIDGE_GRID.shape[0])
    for f, test_idx in enumerate(fold_idx):
        train_idx = np.setdiff1d(np.arange(x.shape[0]), test_idx)
        scaler = _Scaler(x[train_idx])
        xs = scaler(x[train_idx])
        y_tr = y[train_idx]
        mu = y_tr.mean()
        xs_test = scaler(x[test_idx])
        for a, alpha in enumerate(RIDGE_GRID):
            w = _ridge_solve(xs, y_tr - mu, alpha)
            cv_mae[a] += mae(y[test_idx], xs_test @ w + mu)
    best = int(np.argmin(cv_mae))  # argmin takes the first (smallest) alpha on ties
    scaler = _Scaler(x)
    xs = scaler(x)
    mu = float(y.mean())
    w = _ridge_solve(xs, y - mu, RIDGE_GRID[best])
    return RidgeModel(scaler, w, mu, float(RIDGE_GRID[best]))


def _irls_logistic(xs: np.ndarray, t: np.ndarray, alpha: float, max_iter: int = 100) -> np.ndarray:
    """L2-penalized logistic fit by iteratively reweighted least squares.

    xs carries an explicit leading ones column; the intercept coordinate is
    not penalized. Returns the coefficient vector.
    """
    k = xs.shape[1]
    pen = alpha * np.eye(k)
    pen[0, 0] = 0.0
    beta = np.zeros(k)
    for _ in range(max_iter):
        eta = np.clip(xs @ beta, -30.0, 30.0)
        p = 1.0 / (1.0 + np.exp(-eta))
        w = np.maximum(p * (1.0 - p), 1e-10)
        grad = xs.T @ (t - p) - pen @ beta
        hess = (xs * w[:, None]).T @ xs + pen
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        beta = beta + step
        if float(np.max(np.abs(step))) < 1e-10:
            break
    return beta


@dataclass
class LogisticModel:
    scaler: _Scaler
    classes: np.ndarray
    coefs: np.ndarray  # (C, 1 + features), column 0 = intercept
    alpha: float

    def scores(self, x: np.ndarray) -> np.ndarray:
        xs = self.scaler(x)
        xs1 = np.column_stack([np.ones(xs.shape[0]), xs])
        eta = np.clip(xs1 @ self.coefs.T, -30.0, 30.0)
        return 1.0 / (1.0 + np.exp(-eta))

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.classes[np.argmax(self.scores(x), axis=1)]


def _fit_ova(xs: np.ndarray, labels: np.ndarray, classes: np.ndarray, alpha: float) -> np.ndarray:
    xs1 = np.column_stack([np.ones(xs.shape[0]), xs])
    return np.stack([_irls_logistic(xs1, (labels == c).astype(float), alpha) for c in classes])


def logistic_fit_cv(
    x: np.ndarray, labels: np.ndarray, folds: int = 10, seed: int = 0
) -> LogisticModel:
    """One-vs-all logistic regression; penalty from the 11-point grid chosen
    by mean fold balanced accuracy over deterministic stratified folds."""
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels)
    if x.shape[0] != labels.shape[0]:
        raise DataError("X/labels length mismatch")
    classes = np.unique(labels)
    if classes.shape[0] < 2:
        raise DataError("need at least two classes")
    fold_idx = stratified_kfold_indices(labels, folds, seed)
    cv_bacc = np.zeros(RIDGE_GRID.shape[0])
    for test_idx in fold_idx:
        if test_idx.size == 0:
            continue
        train_idx = np.setdiff1d(np.arange(x.shape[0]), test_idx)
        if np.unique(labels[train_idx]).shape[0] < 2:
            continue
        scaler = _Scaler(x[train_idx])
        xs = scaler(x[train_idx])
        xs_test = scaler(x[test_idx])
        tr_classes = np.unique(labels[train_idx])
        for a, alpha in enumerate(RIDGE_GRID):
            coefs = _fit_ova(xs, labels[train_idx], tr_classes, alpha)
            xs1 = np.column_stack([np.ones(xs_test.shape[0]), xs_test])
            pred = tr_classes[np.argmax(xs1 @ coefs.T, axis=1)]
            cv_bacc[a] += balanced_accuracy(pred, labels[test_idx])
    best = int(np.argmax(cv_bacc == cv_bacc.max()))  # first max -> smaller alpha
    scaler = _Scaler(x)
    coefs = _fit_ova(scaler(x), labels, classes, RIDGE_GRID[best])
    return LogisticModel(scaler, classes, coefs, float(RIDGE_GRID[best]))
