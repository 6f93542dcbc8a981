"""Shared fixtures: random small states/datasets and numerical oracles."""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize

from latentline.core import (
    Dataset,
    GammaPosterior,
    GaussianPosterior,
    Hyperparameters,
    ViewData,
    ViewSpec,
    validate_dataset,
)
from latentline.engine import compute_elbo, init_state, sweep


def random_dataset(rng, n_max=30, m_max=4, d_max=6, missing=0.25, feature_selection="random"):
    n = int(rng.integers(3, n_max + 1))
    m_views = int(rng.integers(1, m_max + 1))
    specs, data = [], []
    for m in range(m_views):
        d = int(rng.integers(1, d_max + 1))
        vals = rng.standard_normal((n, d))
        mask = rng.random((n, d)) >= missing
        if not mask.any():
            mask[0, 0] = True
        if feature_selection == "random":
            fs = bool(rng.integers(0, 2))
        else:
            fs = bool(feature_selection)
        specs.append(ViewSpec(view_id=m + 1, dim=d, feature_selection=fs))
        data.append(ViewData(vals, mask))
    return validate_dataset(specs, data)


def random_state(rng, dataset: Dataset, k=None, warm_sweeps=2, hyper=None):
    """State with sane (post-warmup) posteriors for oracle comparisons."""
    if hyper is None:
        hyper = Hyperparameters(
            a_alpha=rng.uniform(0.5, 3.0),
            b_alpha=rng.uniform(0.5, 3.0),
            a_tau=rng.uniform(0.5, 3.0),
            b_tau=rng.uniform(0.5, 3.0),
            a_gamma=rng.uniform(0.5, 3.0),
            b_gamma=rng.uniform(0.5, 3.0),
            k_init=k,
        )
    state = init_state(dataset, hyper, seed=int(rng.integers(0, 2**31)))
    for it in range(1, warm_sweeps + 1):
        state.iteration = it
        sweep(state, dataset)
    return state


# ---------------------------------------------------------------------------
# numerical maximization oracles: optimize the actual bound over one factor's
# parameters and compare with the closed-form coordinate update


def _polished_minimize(fun, x0):
    # coarse localization, then a tight-simplex polish (Powell alone can
    # stall on correlated ridges, Nelder-Mead alone wanders from afar)
    res = minimize(fun, x0, method="Powell",
                   options={"xtol": 1e-6, "ftol": 1e-9, "maxfev": 4000})
    x = res.x
    simplex = np.vstack([x] + [x + 1e-4 * (np.arange(x.size) == j) for j in range(x.size)])
    res = minimize(fun, x, method="Nelder-Mead",
                   options={"initial_simplex": simplex, "xatol": 1e-12, "fatol": 1e-14,
                            "maxiter": 6000, "maxfev": 6000})
    return res.x


def oracle_z(state, dataset):
    """Maximize the bound over q(Z) = (means, shared log-variance), K=1."""
    n = state.n_samples

    def neg(params):
        state.q_z = GaussianPosterior(
            params[:n].reshape(n, 1), np.array([[np.exp(params[n])]])
        )
        return -compute_elbo(state, dataset)

    x0 = np.concatenate([state.q_z.mean.ravel() * 1.1 + 0.01, [np.log(state.q_z.covariance[0, 0]) + 0.1]])
    best = _polished_minimize(neg, x0)
    return best[:n], np.exp(best[n])


def oracle_w(state, dataset, m):
    """Maximize over q(W^(m)) with D=1, K=1: (mean, log-variance)."""
    fs = state.specs[m].feature_selection

    def neg(params):
        cov = np.exp(params[1])
        cov_arr = np.array([[[cov]]]) if fs else np.array([[cov]])
        state.views[m].q_w = GaussianPosterior(np.array([[params[0]]]), cov_arr)
        return -compute_elbo(state, dataset)

    w0 = float(state.views[m].q_w.mean[0, 0])
    v0 = float(state.views[m].q_w.diag_variances()[0, 0])
    best = _polished_minimize(neg, np.array([w0 * 1.2 + 0.05, np.log(v0) + 0.2]))
    return best[0], np.exp(best[1])


def _oracle_gamma_family(setter, state, dataset, q0: GammaPosterior):
    def neg(params):
        setter(GammaPosterior(np.exp(params[:1]), np.exp(params[1:])))
        return -compute_elbo(state, dataset)

    x0 = np.log([float(q0.shape[0]) * 1.3, float(q0.rate[0]) * 0.8])
    best = _polished_minimize(neg, x0)
    return float(np.exp(best[0])), float(np.exp(best[1]))


def oracle_alpha(state, dataset, m):
    def setter(q):
        state.views[m].q_alpha = q

    return _oracle_gamma_family(setter, state, dataset, state.views[m].q_alpha)


def oracle_gamma(state, dataset, m):
    def setter(q):
        state.views[m].q_gamma = q

    return _oracle_gamma_family(setter, state, dataset, state.views[m].q_gamma)


def oracle_tau(state, dataset, m):
    def setter(q):
        state.views[m].q_tau = q

    return _oracle_gamma_family(setter, state, dataset, state.views[m].q_tau)


def rel_close(a, b, tol=1e-6):
    return abs(a - b) <= tol * (1.0 + abs(b))
