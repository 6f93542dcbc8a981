"""Coordinate-ascent mean-field variational inference.

Each update sets one factor of the fully factorised posterior to its exact
conditional optimum given the others; with unit learning rates every sweep is
therefore guaranteed not to decrease the evidence lower bound. Projection
matrices optionally take damped steps (convex combination of old and target
parameters) controlled per view.

Missing entries are first-class: every unobserved cell owns an independent
Gaussian factor, so all N samples contribute to every update and the latent
covariance is shared across samples.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln

from .core import (
    Dataset,
    GammaPosterior,
    GaussianPosterior,
    Hyperparameters,
    ModelState,
    NumericalError,
    ViewPosteriors,
    gamma_entropy,
)

# Jitter escalation for symmetric positive-definite solves: multiplicative
# steps from 1e-10 to 1e-6 relative to the mean diagonal before giving up.
_JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


def chol_inverse(prec: np.ndarray) -> tuple[np.ndarray, float]:
    """Invert a symmetric positive-definite precision matrix.

    Returns (covariance, logdet of covariance). Escalates diagonal jitter
    before raising NumericalError.
    """
    prec = 0.5 * (prec + prec.T)
    scale = float(np.mean(np.diag(prec)))
    if not np.isfinite(scale):
        raise NumericalError("non-finite precision matrix")
    for jit in _JITTERS:
        try:
            low = np.linalg.cholesky(prec + jit * scale * np.eye(prec.shape[0]))
        except np.linalg.LinAlgError:
            continue
        inv_low = np.linalg.inv(low)
        cov = inv_low.T @ inv_low
        logdet_cov = -2.0 * float(np.sum(np.log(np.diag(low))))
        return cov, logdet_cov
    raise NumericalError("SPD factorization failed after jitter escalation")


def logdet_spd(mat: np.ndarray) -> float:
    """Log-determinant of an SPD matrix via Cholesky (with jitter escalation)."""
    mat = 0.5 * (mat + mat.T)
    scale = float(np.mean(np.diag(mat)))
    for jit in _JITTERS:
        try:
            low = np.linalg.cholesky(mat + jit * scale * np.eye(mat.shape[0]))
        except np.linalg.LinAlgError:
            continue
        return 2.0 * float(np.sum(np.log(np.diag(low))))
    raise NumericalError("SPD factorization failed after jitter escalation")


@dataclass(frozen=True)
class FitOptions:
    hyper: Hyperparameters
    track_elbo_every: int = 1
    prune_every: int = 1

    def __post_init__(self):
        if self.track_elbo_every < 1 or self.prune_every < 1:
            raise ValueError("cadence options must be >= 1")


@dataclass
class FitReport:
    halted_on: str  # "elbo_converged" | "max_iter"
    iterations: int
    k_final: int
    elbo_trace: list[float]
    wall_time: float


# ---------------------------------------------------------------------------
# moments shared by the updates


def filled_values(state: ModelState, dataset: Dataset, m: int) -> np.ndarray:
    """Observed values with missing cells replaced by their posterior means."""
    x = dataset.clean_values[m]
    if dataset.n_missing(m) == 0:
        return x
    x = x.copy()
    rows, cols = dataset.missing_index(m)
    x[rows, cols] = state.views[m].q_miss_mean
    return x


def _missing_var_sum(state: ModelState, m: int) -> float:
    return float(np.sum(state.views[m].q_miss_var))


def expected_wtw(state: ModelState, m: int) -> np.ndarray:
    """E[W^T W] including the posterior covariance of every row."""
    return state.views[m].q_w.second_moment()


def expected_ztz(state: ModelState) -> np.ndarray:
    """E[Z^T Z] = M_z^T M_z + N * Sigma_z."""
    return state.q_z.second_moment()


def expected_w_sq(state: ModelState, m: int) -> np.ndarray:
    """Elementwise E[w_dk^2], shape (D, K)."""
    q_w = state.views[m].q_w
    return q_w.mean**2 + q_w.diag_variances()


def tau_moments(state: ModelState, m: int) -> tuple[float, float]:
    q = state.views[m].q_tau
    return float(q.shape[0] / q.rate[0]), float(digamma(q.shape[0]) - np.log(q.rate[0]))


def gamma_mean_vec(state: ModelState, m: int) -> np.ndarray:
    """E[gamma_d]; identically one when feature selection is off."""
    vp = state.views[m]
    if vp.q_gamma is None:
        return np.ones(state.specs[m].dim)
    return vp.q_gamma.mean


# ---------------------------------------------------------------------------
# initialization


def resolve_k_init(dataset: Dataset, hyper: Hyperparameters) -> int:
    if hyper.k_init is not None:
        return hyper.k_init
    total_dim = sum(s.dim for s in dataset.specs)
    return max(1, min(dataset.n_samples, total_dim, 50))


def init_state(dataset: Dataset, hyper: Hyperparameters, seed: int | None = None) -> ModelState:
    """Deterministic seeded initialization.

    q_z mean is standard normal with identity covariance; each q_w mean is
    N(0, 1/D_m) with identity covariance; all Gamma posteriors start at their
    priors; missing-entry means start at zero with unit variance.
    """
    if seed is None:
        seed = hyper.seed
    rng = np.random.default_rng(seed)
    k = resolve_k_init(dataset, hyper)
    n = dataset.n_samples

    q_z = GaussianPosterior(rng.standard_normal((n, k)), np.eye(k))
    views = []
    for spec, _ in zip(dataset.specs, dataset.views):
        mean_w = rng.normal(0.0, 1.0 / math.sqrt(spec.dim), size=(spec.dim, k))
        if spec.feature_selection:
            cov_w = np.broadcast_to(np.eye(k), (spec.dim, k, k)).copy()
            q_gamma = GammaPosterior(
                np.full(spec.dim, hyper.a_gamma), np.full(spec.dim, hyper.b_gamma)
            )
        else:
            cov_w = np.eye(k)
            q_gamma = None
        m_idx = len(views)
        n_miss = dataset.n_missing(m_idx)
        views.append(
            ViewPosteriors(
                q_w=GaussianPosterior(mean_w, cov_w),
                q_alpha=GammaPosterior(np.full(k, hyper.a_alpha), np.full(k, hyper.b_alpha)),
                q_tau=GammaPosterior(np.array([hyper.a_tau]), np.array([hyper.b_tau])),
                q_gamma=q_gamma,
                q_miss_mean=np.zeros(n_miss),
                q_miss_var=np.ones(n_miss),
            )
        )
    return ModelState(
        specs=list(dataset.specs),
        hyper=hyper,
        q_z=q_z,
        views=views,
        k_current=k,
        elbo_trace=[],
        iteration=0,
        rng=rng,
    )


# ---------------------------------------------------------------------------
# coordinate updates


def update_z(state: ModelState, dataset: Dataset) -> None:
    """Exact update of q(Z).

    Every cell (observed or with a missing-entry factor) contributes, so the
    posterior covariance (I + sum_m <tau_m> E[W_m^T W_m])^{-1} is shared by
    all samples; means are the precision-weighted data projections.
    """
    k = state.k_current
    prec = np.eye(k)
    proj = np.zeros((state.n_samples, k))
    for m in range(dataset.n_views):
        e_tau, _ = tau_moments(state, m)
        prec += e_tau * expected_wtw(state, m)
        proj += e_tau * filled_values(state, dataset, m) @ state.views[m].q_w.mean
    cov, _ = chol_inverse(prec)
    state.q_z = GaussianPosterior(proj @ cov, cov)


def update_w(state: ModelState, dataset: Dataset, m: int, rho: float | None = None) -> None:
    """Damped update of q(W^(m)).

    The target posterior per row d has precision diag(<gamma_d> <alpha>) +
    <tau> E[Z^T Z]; damping takes new = (1-rho)*old + rho*target on means and
    covariance entries. rho=None resolves the view's configured schedule at
    the current iteration.
    """
    spec = state.specs[m]
    vp = state.views[m]
    if rho is None:
        rho = spec.learning_rate.at(max(state.iteration, 1))
    e_tau, _ = tau_moments(state, m)
    ztz = expected_ztz(state)
    e_alpha = vp.q_alpha.mean
    x_fill = filled_values(state, dataset, m)
    b = e_tau * (x_fill.T @ state.q_z.mean)  # (D, K)

    if spec.feature_selection:
        e_gamma = vp.q_gamma.mean
        k = state.k_current
        target_cov = np.empty((spec.dim, k, k))
        target_mean = np.empty((spec.dim, k))
        for d in range(spec.dim):
            cov_d, _ = chol_inverse(np.diag(e_gamma[d] * e_alpha) + e_tau * ztz)
            target_cov[d] = cov_d
            target_mean[d] = b[d] @ cov_d
    else:
        target_cov, _ = chol_inverse(np.diag(e_alpha) + e_tau * ztz)
        target_mean = b @ target_cov

    new_mean = (1.0 - rho) * vp.q_w.mean + rho * target_mean
    new_cov = (1.0 - rho) * vp.q_w.covariance + rho * target_cov
    vp.q_w = GaussianPosterior(new_mean, new_cov)


def update_alpha(state: ModelState, m: int) -> None:
    """q(alpha_k^(m)) <- Gamma(a + D/2, b + 1/2 sum_d <gamma_d> E[w_dk^2])."""
    spec = state.specs[m]
    hyper = state.hyper
    e_gamma = gamma_mean_vec(state, m)
    w_sq = expected_w_sq(state, m)
    shape = np.full(state.k_current, hyper.a_alpha + spec.dim / 2.0)
    rate = hyper.b_alpha + 0.5 * (e_gamma @ w_sq)
    state.views[m].q_alpha = GammaPosterior(shape, rate)


def update_gamma(state: ModelState, m: int) -> None:
    """q(gamma_d^(m)) <- Gamma(a + K/2, b + 1/2 sum_k <alpha_k> E[w_dk^2])."""
    spec = state.specs[m]
    if not spec.feature_selection:
        raise ValueError(f"view {spec.view_id} has no feature selection")
    hyper = state.hyper
    e_alpha = state.views[m].q_alpha.mean
    w_sq = expected_w_sq(state, m)
    shape = np.full(spec.dim, hyper.a_gamma + state.k_current / 2.0)
    rate = hyper.b_gamma + 0.5 * (w_sq @ e_alpha)
    state.views[m].q_gamma = GammaPosterior(shape, rate)


def expected_sq_residual(state: ModelState, dataset: Dataset, m: int) -> float:
    """E_q[ sum_{n,d} (x_nd - z_n w_d^T)^2 ] with all second moments."""
    x_fill = filled_values(state, dataset, m)
    vp = state.views[m]
    recon = state.q_z.mean @ vp.q_w.mean.T
    term_sq = float(np.sum(x_fill * x_fill)) + _missing_var_sum(state, m)
    term_cross = -2.0 * float(np.sum(x_fill * recon))
    term_second = float(np.sum(expected_wtw(state, m) * expected_ztz(state)))
    return term_sq + term_cross + term_second


def update_tau(state: ModelState, dataset: Dataset, m: int) -> None:
    """q(tau^(m)) <- Gamma(a + N*D/2, b + E[residual]/2).

    Every cell of the view is effective: observed ones directly, unobserved
    ones through their posterior factors.
    """
    spec = state.specs[m]
    hyper = state.hyper
    n_eff = state.n_samples * spec.dim
    shape = np.array([hyper.a_tau + n_eff / 2.0])
    rate = np.array([hyper.b_tau + 0.5 * expected_sq_residual(state, dataset, m)])
    state.views[m].q_tau = GammaPosterior(shape, rate)


def update_missing(state: ModelState, dataset: Dataset, m: int) -> None:
    """Each unobserved cell gets N(<z_n><w_d>^T, 1/<tau>)."""
    if dataset.n_missing(m) == 0:
        return
    vp = state.views[m]
    e_tau, _ = tau_moments(state, m)
    rows, cols = dataset.missing_index(m)
    recon = state.q_z.mean @ vp.q_w.mean.T
    vp.q_miss_mean = recon[rows, cols]
    vp.q_miss_var = np.full(rows.shape[0], 1.0 / e_tau)


# ---------------------------------------------------------------------------
# evidence lower bound


def _gamma_cross_terms(
    shape_q: np.ndarray, rate_q: np.ndarray, a0: float, b0: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(E[x], E[log x], E[log p(x)] under prior Gamma(a0, b0)), elementwise."""
    e_x = shape_q / rate_q
    e_log = digamma(shape_q) - np.log(rate_q)
    e_logp = a0 * math.log(b0) - gammaln(a0) + (a0 - 1.0) * e_log - b0 * e_x
    return e_x, e_log, e_logp


def compute_elbo(state: ModelState, dataset: Dataset) -> float:
    """Full evidence lower bound of the current posterior.

    Expected log-joint of the generative model under q (summing likelihood
    terms over observed cells and missing-entry factors alike) plus the
    entropy of every q factor. Raises NumericalError if non-finite.
    """
    hyper = state.hyper
    n = state.n_samples
    k = state.k_current
    log2pi = math.log(2.0 * math.pi)
    elbo = 0.0

    # latent scores: prior cross-entropy + entropy
    sigma_z_logdet = logdet_spd(state.q_z.covariance)
    e_ztz_diag = float(np.sum(state.q_z.mean**2)) + n * float(np.trace(state.q_z.covariance))
    elbo += -0.5 * n * k * log2pi - 0.5 * e_ztz_diag
    elbo += 0.5 * n * (k * (1.0 + log2pi) + sigma_z_logdet)

    for m, spec in enumerate(state.specs):
        vp = state.views[m]
        d = spec.dim
        e_tau, e_log_tau = tau_moments(state, m)

        # likelihood over all N*D cells
        n_cells = n * d
        elbo += 0.5 * n_cells * (e_log_tau - log2pi)
        elbo += -0.5 * e_tau * expected_sq_residual(state, dataset, m)

        # projection matrix: prior cross-entropy + entropy
        e_alpha, e_log_alpha, e_logp_alpha = _gamma_cross_terms(
            vp.q_alpha.shape, vp.q_alpha.rate, hyper.a_alpha, hyper.b_alpha
        )
        w_sq = expected_w_sq(state, m)
        if vp.q_gamma is not None:
            e_gamma, e_log_gamma, e_logp_gamma = _gamma_cross_terms(
                vp.q_gamma.shape, vp.q_gamma.rate, hyper.a_gamma, hyper.b_gamma
            )
        else:
            e_gamma = np.ones(d)
            e_log_gamma = np.zeros(d)
            e_logp_gamma = None
        elbo += (
            -0.5 * d * k * log2pi
            + 0.5 * k * float(np.sum(e_log_gamma))
            + 0.5 * d * float(np.sum(e_log_alpha))
            - 0.5 * float(e_gamma @ w_sq @ e_alpha)
        )
        if vp.q_w.covariance.ndim == 3:
            w_logdet = sum(logdet_spd(vp.q_w.covariance[dd]) for dd in range(d))
        else:
            w_logdet = d * logdet_spd(vp.q_w.covariance)
        elbo += 0.5 * (d * k * (1.0 + log2pi) + w_logdet)

        # column and row precision hyperpriors + entropies
        elbo += float(np.sum(e_logp_alpha))
        elbo += float(np.sum(gamma_entropy(vp.q_alpha.shape, vp.q_alpha.rate)))
        if e_logp_gamma is not None:
            elbo += float(np.sum(e_logp_gamma))
            elbo += float(np.sum(gamma_entropy(vp.q_gamma.shape, vp.q_gamma.rate)))

        # noise precision
        _, _, e_logp_tau = _gamma_cross_terms(
            vp.q_tau.shape, vp.q_tau.rate, hyper.a_tau, hyper.b_tau
        )
        elbo += float(np.sum(e_logp_tau))
        elbo += float(np.sum(gamma_entropy(vp.q_tau.shape, vp.q_tau.rate)))

        # missing-entry factor entropies (their likelihood terms are above)
        if vp.q_miss_var.size:
            elbo += 0.5 * float(np.sum(1.0 + log2pi + np.log(vp.q_miss_var)))

    if not np.isfinite(elbo):
        raise NumericalError("evidence lower bound is non-finite")
    return float(elbo)


# ---------------------------------------------------------------------------
# pruning


def prune_factors(state: ModelState) -> ModelState:
    """Drop every factor whose loading means stay below the prune threshold
    in all views; never drops the last remaining factor."""
    threshold = state.hyper.prune_threshold
    col_max = np.zeros(state.k_current)
    for vp in state.views:
        col_max = np.maximum(col_max, np.abs(vp.q_w.mean).max(axis=0))
    keep = col_max >= threshold
    if not keep.any():
        keep[int(np.argmax(col_max))] = True
    if keep.all():
        return state

    idx = np.nonzero(keep)[0]
    state.q_z = GaussianPosterior(
        state.q_z.mean[:, idx], state.q_z.covariance[np.ix_(idx, idx)]
    )
    for vp in state.views:
        if vp.q_w.covariance.ndim == 3:
            cov = vp.q_w.covariance[:, idx[:, None], idx[None, :]]
        else:
            cov = vp.q_w.covariance[np.ix_(idx, idx)]
        vp.q_w = GaussianPosterior(vp.q_w.mean[:, idx], cov)
        vp.q_alpha = GammaPosterior(vp.q_alpha.shape[idx], vp.q_alpha.rate[idx])
    state.k_current = int(keep.sum())
    return state


# ---------------------------------------------------------------------------
# fit loop


def sweep(state: ModelState, dataset: Dataset, rho_override: float | None = None) -> None:
    """One full coordinate pass: q(Z), then per view W, alpha, gamma, tau,
    missing entries."""
    update_z(state, dataset)
    for m in range(dataset.n_views):
        update_w(state, dataset, m, rho=rho_override)
        update_alpha(state, m)
        if state.specs[m].feature_selection:
            update_gamma(state, m)
        update_tau(state, dataset, m)
        update_missing(state, dataset, m)


def stop_rule(trace: list[float], rel_tol: float) -> bool:
    """Halt when LB[-2] > LB[-1] * (1 - rel_tol), verbatim."""
    if len(trace) < 2:
        return False
    return trace[-2] > trace[-1] * (1.0 - rel_tol)


def fit(dataset: Dataset, options: FitOptions, seed: int | None = None) -> tuple[ModelState, FitReport]:
    """Run coordinate ascent until the lower-bound stopping rule or max_iter.

    Deterministic given the seed. The recorded trace holds one value per
    tracked iteration, computed after pruning.
    """
    t0 = time.perf_counter()
    hyper = options.hyper
    state = init_state(dataset, hyper, seed)
    halted = "max_iter"
    iterations = 0
    for it in range(1, hyper.max_iter + 1):
        state.iteration = it
        iterations = it
        sweep(state, dataset)
        if it % options.prune_every == 0:
            prune_factors(state)
        if it % options.track_elbo_every == 0:
            state.elbo_trace.append(compute_elbo(state, dataset))
            if stop_rule(state.elbo_trace, hyper.elbo_rel_tol):
                halted = "elbo_converged"
                break
    report = FitReport(
        halted_on=halted,
        iterations=iterations,
        k_final=state.k_current,
        elbo_trace=list(state.elbo_trace),
        wall_time=time.perf_counter() - t0,
    )
    return state, report
