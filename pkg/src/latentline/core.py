"""Core containers: view descriptions, data with missingness masks, posteriors.

Everything downstream (inference engine, prediction, baselines) works on the
types defined here. All containers are plain values built on numpy arrays;
nothing mutates them after construction except the fit loop, which owns its
ModelState exclusively.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma


class DataError(ValueError):
    """Raised when input data violates a structural contract."""


class NumericalError(RuntimeError):
    """Raised when inference hits an unrecoverable numerical failure."""


VIEW_KINDS = ("real", "indicator")
VIEW_ROLES = ("input", "output")


@dataclass(frozen=True)
class LearningRate:
    """Damping schedule applied to one view's projection-matrix update.

    kind="constant" uses the fixed value (in (0, 1]); kind="inverse_iteration"
    uses 1/iteration with iterations counted from 1.
    """

    kind: str = "constant"
    value: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "inverse_iteration"):
            raise DataError(f"unknown learning-rate kind {self.kind!r}")
        if self.kind == "constant" and not (0.0 < self.value <= 1.0):
            raise DataError(f"constant learning rate must be in (0, 1], got {self.value}")

    def at(self, iteration: int) -> float:
        if self.kind == "constant":
            return self.value
        if iteration < 1:
            raise DataError("iteration counting starts at 1")
        return 1.0 / iteration

    @classmethod
    def parse(cls, text: str) -> "LearningRate":
        """Parse 'inv' or a float in (0, 1]."""
        if text.strip().lower() in ("inv", "inverse", "inverse_iteration"):
            return cls("inverse_iteration")
        return cls("constant", float(text))


@dataclass(frozen=True)
class ViewSpec:
    """Static description of one data view (block of variables)."""

    view_id: int
    dim: int
    kind: str = "real"
    feature_selection: bool = False
    learning_rate: LearningRate = field(default_factory=LearningRate)
    role: str = "input"
    name: str = ""

    def __post_init__(self):
        if self.dim < 1:
            raise DataError(f"view {self.view_id}: dim must be >= 1, got {self.dim}")
        if self.kind not in VIEW_KINDS:
            raise DataError(f"view {self.view_id}: unknown kind {self.kind!r}")
        if self.role not in VIEW_ROLES:
            raise DataError(f"view {self.view_id}: unknown role {self.role!r}")


@dataclass
class ViewData:
    """Observation matrix for one view plus its observed-entry mask.

    values : (N, D) float64; must be finite wherever mask is True. Masked-out
    cells may hold anything (they are never read).
    mask : (N, D) bool; True = observed.
    """

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Hyperparameters:
    """Gamma prior shape/rate pairs plus fit-control knobs.

    Defaults: near-non-informative 1e-14 priors (standard for ARD), pruning
    threshold 1e-6, relative lower-bound tolerance 1e-6, 50000 iterations.
    k_init=None defers to min(N, sum of dims, 50) at initialization.
    """

    a_alpha: float = 1e-14
    b_alpha: float = 1e-14
    a_tau: float = 1e-14
    b_tau: float = 1e-14
    a_gamma: float = 1e-14
    b_gamma: float = 1e-14
    k_init: int | None = None
    prune_threshold: float = 1e-6
    elbo_rel_tol: float = 1e-6
    max_iter: int = 50_000
    seed: int = 0

    def __post_init__(self):
        for name in ("a_alpha", "b_alpha", "a_tau", "b_tau", "a_gamma", "b_gamma"):
            if getattr(self, name) <= 0:
                raise DataError(f"{name} must be > 0")
        if self.k_init is not None and self.k_init < 1:
            raise DataError("k_init must be >= 1")
        if self.prune_threshold <= 0:
            raise DataError("prune_threshold must be > 0")
        if self.max_iter < 1:
            raise DataError("max_iter must be >= 1")


@dataclass
class GaussianPosterior:
    """Gaussian variational factor.

    mean : (R, K) array (rows are independent factors sharing structure).
    covariance : one of
        (K, K)    -- single covariance shared by all rows,
        (R, K, K) -- one covariance per row,
        (R,)      -- independent scalar factors with per-entry variances
                     (used for the missing-entry posteriors; mean is (R,)).
    """

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.covariance = np.asarray(self.covariance, dtype=np.float64)

    def cov_for_row(self, d: int) -> np.ndarray:
        if self.covariance.ndim == 3:
            return self.covariance[d]
        return self.covariance

    def sum_row_covs(self) -> np.ndarray:
        """Sum of per-row covariances: rows * cov when shared."""
        if self.covariance.ndim == 3:
            return self.covariance.sum(axis=0)
        return self.mean.shape[0] * self.covariance

    def second_moment(self) -> np.ndarray:
        """E[A^T A] for the row-stacked variable A: mean^T mean + sum of covs."""
        return self.mean.T @ self.mean + self.sum_row_covs()

    def diag_variances(self) -> np.ndarray:
        """Per-entry variances, shaped like mean."""
        if self.covariance.ndim == 1:
            return self.covariance
        if self.covariance.ndim == 3:
            return np.einsum("dkk->dk", self.covariance)
        return np.broadcast_to(np.diag(self.covariance), self.mean.shape)

    def validate(self):
        if not np.all(np.isfinite(self.mean)):
            raise DataError("Gaussian mean contains non-finite values")
        if not np.all(np.isfinite(self.covariance)):
            raise DataError("Gaussian covariance contains non-finite values")
        if self.covariance.ndim == 1:
            if np.any(self.covariance <= 0):
                raise DataError("per-entry variances must be positive")
            return
        covs = self.covariance[None] if self.covariance.ndim == 2 else self.covariance
        for c in covs:
            if not np.allclose(c, c.T, rtol=0, atol=1e-10 * max(1.0, float(np.abs(c).max()))):
                raise DataError("covariance not symmetric")
            try:
                np.linalg.cholesky(0.5 * (c + c.T))
            except np.linalg.LinAlgError as exc:
                raise DataError("covariance not positive definite") from exc


@dataclass
class GammaPosterior:
    """Gamma variational factor with elementwise shape/rate vectors."""

    shape: np.ndarray
    rate: np.ndarray

    def __post_init__(self):
        self.shape = np.atleast_1d(np.asarray(self.shape, dtype=np.float64))
        self.rate = np.atleast_1d(np.asarray(self.rate, dtype=np.float64))

    def validate(self):
        if self.shape.shape != self.rate.shape:
            raise DataError("gamma shape/rate length mismatch")
        if np.any(self.shape <= 0) or np.any(self.rate <= 0):
            raise DataError("gamma shape and rate must be positive")

    @property
    def mean(self) -> np.ndarray:
        return self.shape / self.rate


def gamma_expectations(g: GammaPosterior) -> tuple[np.ndarray, np.ndarray]:
    """Moments of a Gamma(shape, rate) posterior used by the conjugate updates.

    Returns (E[x], E[log x]) = (shape/rate, digamma(shape) - log(rate)).
    """
    g.validate()
    return g.shape / g.rate, digamma(g.shape) - np.log(g.rate)


@dataclass
class ViewPosteriors:
    """All variational factors owned by one view."""

    q_w: GaussianPosterior
    q_alpha: GammaPosterior
    q_tau: GammaPosterior
    q_gamma: GammaPosterior | None
    # Missing-entry factors: flat arrays aligned with Dataset.missing_index(m).
    q_miss_mean: np.ndarray
    q_miss_var: np.ndarray


@dataclass
class ModelState:
    """Union of every variational posterior plus fit bookkeeping.

    No model random variable lives outside this container: q(Z), per-view
    q(W), q(alpha), q(tau), optional q(gamma), and the missing-entry factors.
    """

    specs: list[ViewSpec]
    hyper: Hyperparameters
    q_z: GaussianPosterior
    views: list[ViewPosteriors]
    k_current: int
    elbo_trace: list[float] = field(default_factory=list)
    iteration: int = 0
    rng: np.random.Generator | None = None
    standardizers: list | None = None  # optional per-view de-standardization metadata

    @property
    def n_samples(self) -> int:
        return self.q_z.mean.shape[0]

    def view_by_id(self, view_id: int) -> int:
        for i, s in enumerate(self.specs):
            if s.view_id == view_id:
                return i
        raise DataError(f"unknown view id {view_id}")

    def validate(self):
        if self.k_current < 1:
            raise DataError("k_current must be >= 1")
        if self.q_z.mean.shape[1] != self.k_current:
            raise DataError("q_z column count disagrees with k_current")
        self.q_z.validate()
        for spec, vp in zip(self.specs, self.views):
            if vp.q_w.mean.shape != (spec.dim, self.k_current):
                raise DataError(f"view {spec.view_id}: q_w shape mismatch")
            vp.q_w.validate()
            vp.q_alpha.validate()
            if vp.q_alpha.shape.shape[0] != self.k_current:
                raise DataError(f"view {spec.view_id}: q_alpha length mismatch")
            vp.q_tau.validate()
            if vp.q_gamma is not None:
                vp.q_gamma.validate()
                if vp.q_gamma.shape.shape[0] != spec.dim:
                    raise DataError(f"view {spec.view_id}: q_gamma length mismatch")
            if np.any(vp.q_miss_var < 0):
                raise DataError("missing-entry variances must be nonnegative")


@dataclass
class Dataset:
    """Validated bundle of view specs and observations.

    Produced by validate_dataset; carries sanitized value matrices in which
    every unobserved cell is zeroed so downstream arithmetic never touches
    caller-provided garbage at masked positions.
    """

    specs: list[ViewSpec]
    views: list[ViewData]
    clean_values: list[np.ndarray]
    missing_rows: list[np.ndarray]
    missing_cols: list[np.ndarray]

    @property
    def n_samples(self) -> int:
        return self.views[0].n_samples if self.views else 0

    @property
    def n_views(self) -> int:
        return len(self.views)

    def missing_index(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        return self.missing_rows[m], self.missing_cols[m]

    def n_missing(self, m: int) -> int:
        return self.missing_rows[m].shape[0]


def validate_dataset(specs: list[ViewSpec], data: list[ViewData]) -> Dataset:
    """Check every structural invariant and return a sanitized Dataset.

    Raises DataError on: spec/data length mismatch, non-unique or
    non-contiguous view ids, shape disagreement, non-finite observed value,
    or a view with zero observed entries overall.
    """
    if len(specs) != len(data):
        raise DataError(f"{len(specs)} specs but {len(data)} data views")
    if not specs:
        raise DataError("empty dataset")
    ids = sorted(s.view_id for s in specs)
    if len(set(ids)) != len(ids) or ids != list(range(ids[0], ids[0] + len(ids))):
        raise DataError("view ids must be unique and contiguous")

    n_ref = data[0].values.shape[0]
    clean, rows, cols = [], [], []
    for spec, vd in zip(specs, data):
        if vd.values.shape != vd.mask.shape:
            raise DataError(f"view {spec.view_id}: values/mask shape mismatch")
        if vd.values.ndim != 2 or vd.values.shape[1] != spec.dim:
            raise DataError(
                f"view {spec.view_id}: expected shape (N, {spec.dim}), got {vd.values.shape}"
            )
        if vd.values.shape[0] != n_ref:
            raise DataError(f"view {spec.view_id}: sample count differs across views")
        if not vd.mask.any():
            raise DataError(f"view {spec.view_id} has no observations")
        observed = vd.values[vd.mask]
        if not np.all(np.isfinite(observed)):
            raise DataError(f"view {spec.view_id}: non-finite observed value")
        clean.append(np.where(vd.mask, vd.values, 0.0))
        r, c = np.nonzero(~vd.mask)
        rows.append(r)
        cols.append(c)
    return Dataset(list(specs), list(data), clean, rows, cols)


def gamma_entropy(shape: np.ndarray, rate: np.ndarray) -> np.ndarray:
    """Differential entropy of Gamma(shape, rate), elementwise."""
    from scipy.special import gammaln

    return shape - np.log(rate) + gammaln(shape) + (1.0 - shape) * digamma(shape)


def gaussian_entropy_from_logdet(logdet: float, k: int) -> float:
    """Entropy of a K-dim Gaussian from the log-determinant of its covariance."""
    return 0.5 * (k * (1.0 + math.log(2.0 * math.pi)) + logdet)
