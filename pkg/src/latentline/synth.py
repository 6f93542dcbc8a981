"""Ground-truth synthetic data: multi-view factor-model sampling and a
longitudinal cohort generator for the benchmark harness."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import orth

from .core import DataError, ViewData, ViewSpec
from .longitudinal import DIAGNOSIS_LABELS, SubjectTable, VariableCatalog


@dataclass(frozen=True)
class MissingSpec:
    mechanism: str = "none"  # "none" | "mcar" | "monotone_dropout"
    rate: float = 0.0

    def __post_init__(self):
        if self.mechanism not in ("none", "mcar", "monotone_dropout"):
            raise DataError(f"unknown missing mechanism {self.mechanism!r}")
        if not (0.0 <= self.rate < 1.0):
            raise DataError("missing rate must be in [0, 1)")


@dataclass(frozen=True)
class SynthConfig:
    """Forward-sampling configuration for the generative model.

    active_factors[m] lists the latent columns allowed to load on view m
    (None = all). relevant_features[m] lists the rows of view m carrying
    signal (None = all; the rest are zeroed and generate pure noise).
    noise_precision[m] sets the per-view Gaussian noise; None derives it
    from snr (noise variance = signal variance / snr).
    Under monotone dropout the views are interpreted as ordered visits and
    each (subject, column) drops out permanently with per-visit probability
    `rate` after the first visit.
    """

    n_subjects: int
    k_true: int
    dims: tuple
    active_factors: tuple | None = None
    relevant_features: tuple | None = None
    noise_precision: tuple | None = None
    snr: float = 10.0
    missing: MissingSpec = field(default_factory=MissingSpec)
    seed: int = 0

    def __post_init__(self):
        if self.k_true < 1:
            raise DataError("k_true must be >= 1")
        if self.n_subjects < 1:
            raise DataError("n_subjects must be >= 1")
        if any(d < 1 for d in self.dims):
            raise DataError("view dims must be >= 1")


@dataclass
class GroundTruth:
    z: np.ndarray
    w: list[np.ndarray]
    noiseless: list[np.ndarray]
    mask: list[np.ndarray]
    noise_variance: list[float]


def generate(config: SynthConfig) -> tuple[list[ViewSpec], list[ViewData], GroundTruth]:
    """Sample the generative model and apply the missing mechanism.

    Z ~ N(0, I); per view, loading columns outside the active-factor set and
    rows outside the relevant-feature subset are zero; data = Z W^T + noise.
    Deterministic given config.seed.
    """
    rng = np.random.default_rng(config.seed)
    n, k = config.n_subjects, config.k_true
    z = rng.standard_normal((n, k))
    specs, views, ws, clean, masks, noise_vars = [], [], [], [], [], []
    for m, d in enumerate(config.dims):
        w = rng.standard_normal((d, k))
        if config.active_factors is not None and config.active_factors[m] is not None:
            active = np.zeros(k, dtype=bool)
            active[list(config.active_factors[m])] = True
            w[:, ~active] = 0.0
        if config.relevant_features is not None and config.relevant_features[m] is not None:
            relevant = np.zeros(d, dtype=bool)
            relevant[list(config.relevant_features[m])] = True
            w[~relevant, :] = 0.0
        signal = z @ w.T
        if config.noise_precision is not None and config.noise_precision[m] is not None:
            noise_var = 1.0 / config.noise_precision[m]
        else:
            sig_var = float(signal.var())
            noise_var = (sig_var if sig_var > 0 else 1.0) / config.snr
        x = signal + np.sqrt(noise_var) * rng.standard_normal((n, d))
        specs.append(ViewSpec(m + 1, d))
        ws.append(w)
        clean.append(signal)
        noise_vars.append(noise_var)
        views.append(x)

    if config.missing.mechanism == "mcar":
        masks = [rng.random(x.shape) >= config.missing.rate for x in views]
    elif config.missing.mechanism == "monotone_dropout":
        width = max(config.dims)
        # dropout visit per (subject, column track); visit 0 always kept
        surviving = np.ones((n, width), dtype=bool)
        masks = []
        for m, x in enumerate(views):
            d = x.shape[1]
            if m > 0:
                surviving[:, :width] &= rng.random((n, width)) >= config.missing.rate
            masks.append(surviving[:, :d].copy())
    else:
        masks = [np.ones(x.shape, dtype=bool) for x in views]

    # guarantee at least one observation per view
    for mk in masks:
        if not mk.any():
            mk[0, 0] = True
    data = [ViewData(x, mk) for x, mk in zip(views, masks)]
    truth = GroundTruth(z, ws, clean, masks, noise_vars)
    return specs, data, truth


def subspace_alignment(w_learned: np.ndarray, w_true: np.ndarray) -> float:
    """Mean singular value of the cross-projection of the two column spaces.

    1.0 for identical (or rotated) subspaces, 0.0 for orthogonal ones.
    """
    if not np.any(w_learned) or not np.any(w_true):
        raise DataError("zero matrix has no column space")
    q1 = orth(w_learned)
    q2 = orth(w_true)
    s = np.linalg.svd(q1.T @ q2, compute_uv=False)
    return float(s.mean())


# ---------------------------------------------------------------------------
# longitudinal cohort


@dataclass(frozen=True)
class CohortConfig:
    """Synthetic longitudinal cohort with correlated output tasks.

    Subjects carry a latent (level, slope) pair per factor; every variable is
    a linear readout of the latent trajectory plus noise, so the diagnosis,
    volume and score tasks share structure. Monotone dropout removes each
    (subject, variable) permanently with per-visit probability dropout_rate;
    extra MCAR noise removes single cells at mcar_rate.
    """

    n_subjects: int = 120
    n_ti: int = 3
    n_td: int = 4
    k_latent: int = 2
    noise_scale: float = 0.25
    output_private_weight: float = 0.0  # share of V/A variance from subject-private trends
    max_month: int = 36
    step: int = 6
    dropout_rate: float = 0.0
    output_dropout_rate: float | None = None  # V/A/D histories; defaults to dropout_rate
    mcar_rate: float = 0.0
    seed: int = 0

    @property
    def resolved_output_dropout(self) -> float:
        return self.dropout_rate if self.output_dropout_rate is None else self.output_dropout_rate


def default_cohort_catalog(config: CohortConfig) -> VariableCatalog:
    names = (
        [f"ti_{i}" for i in range(1, config.n_ti + 1)]
        + [f"td_{i}" for i in range(1, config.n_td + 1)]
        + ["ventricle", "adas13", "diagnosis"]
    )
    groups = ["TI"] * config.n_ti + ["TD"] * config.n_td + ["V", "A", "D"]
    return VariableCatalog(tuple(names), tuple(groups))


def synthetic_cohort(config: CohortConfig) -> tuple[SubjectTable, SubjectTable]:
    """Generate (observed table, complete ground-truth table)."""
    rng = np.random.default_rng(config.seed)
    catalog = default_cohort_catalog(config)
    months = list(range(0, config.max_month + 1, config.step))
    k = config.k_latent

    observed = SubjectTable(catalog)
    complete = SubjectTable(catalog)

    def unit_rows(shape, norm):
        raw = rng.standard_normal(shape)
        if raw.ndim == 1:
            return raw / np.linalg.norm(raw) * norm
        return raw / np.linalg.norm(raw, axis=1, keepdims=True) * norm

    # fixed loading norms keep task signal strength comparable across seeds
    load_ti = unit_rows((config.n_ti, k), math.sqrt(k))
    load_td = unit_rows((config.n_td, 2 * k), math.sqrt(2 * k))
    load_v = unit_rows(2 * k, math.sqrt(2 * k))
    load_a = unit_rows(2 * k, math.sqrt(2 * k))
    load_d = unit_rows(2 * k, math.sqrt(2 * k))

    # per-subject progression scores, used to cut the three classes evenly
    progression = {}
    for s in range(config.n_subjects):
        sid = f"s{s + 1:04d}"
        level = rng.standard_normal(k)
        slope = rng.standard_normal(k)
        private = rng.standard_normal(4)  # (level, slope) for V and for A
        progression[sid] = (level, slope, private)
    d_scores = []
    for sid, (level, slope, _) in progression.items():
        for t in months:
            zt = np.concatenate([level, slope * (t / config.max_month)])
            d_scores.append(float(load_d @ zt))
    lo, hi = np.quantile(d_scores, [1.0 / 3.0, 2.0 / 3.0])

    # mixing weights keeping the shared+private output variance comparable
    # to the purely shared case
    w_priv = math.sqrt(config.output_private_weight)
    w_shared = math.sqrt(1.0 - config.output_private_weight)
    priv_scale = math.sqrt(2.0 * k) / math.sqrt(2.0)

    def diagnosis_of(score: float) -> float:
        if score < lo:
            return 0.0
        if score < hi:
            return 1.0
        return 2.0

    for sid, (level, slope, private) in progression.items():
        # dropout month per variable (first visit always kept)
        dropout: dict[str, int | None] = {}
        for name in catalog.names:
            group = catalog.group_of(name)
            if group == "TI":
                continue
            rate = config.dropout_rate if group == "TD" else config.resolved_output_dropout
            cut = None
            for vi in range(1, len(months)):
                if rng.random() < rate:
                    cut = months[vi]
                    break
            dropout[name] = cut

        for i, name in enumerate(catalog.of_group("TI")):
            val = float(load_ti[i] @ level + config.noise_scale * rng.standard_normal())
            complete.records[(sid, 0, name)] = val
            observed.records[(sid, 0, name)] = val
        for t in months:
            zt = np.concatenate([level, slope * (t / config.max_month)])
            row_vals = {}
            for i, name in enumerate(catalog.of_group("TD")):
                row_vals[name] = float(load_td[i] @ zt + config.noise_scale * rng.standard_normal())
            frac = t / config.max_month
            priv_v = priv_scale * (private[0] + private[1] * frac)
            priv_a = priv_scale * (private[2] + private[3] * frac)
            row_vals[catalog.ventricle] = float(
                w_shared * (load_v @ zt) + w_priv * priv_v
                + config.noise_scale * rng.standard_normal()
            )
            row_vals[catalog.adas] = float(
                w_shared * (load_a @ zt) + w_priv * priv_a
                + config.noise_scale * rng.standard_normal()
            )
            row_vals[catalog.diagnosis] = diagnosis_of(float(load_d @ zt))
            for name, val in row_vals.items():
                complete.records[(sid, t, name)] = val
                cut = dropout.get(name)
                if cut is not None and t >= cut:
                    continue
                if config.mcar_rate > 0 and rng.random() < config.mcar_rate:
                    continue
                observed.records[(sid, t, name)] = val
    return observed, complete
