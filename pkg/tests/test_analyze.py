import numpy as np
import pytest

from latentline.analyze import (
    classify_onehot,
    factor_activity,
    feature_relevance,
    predict_view,
    subject_trajectory,
)
from latentline.core import (
    DataError,
    GammaPosterior,
    GaussianPosterior,
    Hyperparameters,
    ViewData,
    ViewSpec,
    validate_dataset,
)
from latentline.engine import FitOptions, compute_elbo, fit, init_state, prune_factors, sweep
from latentline.longitudinal import (
    WindowLayout,
    assemble,
    build_windows,
    fit_standardizer,
)

from test_longitudinal import full_table, small_catalog


def point_mass_state(z, w, tau=1.0, kind="real"):
    z = np.atleast_2d(np.asarray(z, float))
    w = np.atleast_2d(np.asarray(w, float))
    n, k = z.shape
    d = w.shape[0]
    values = z @ w.T
    ds = validate_dataset([ViewSpec(1, d, kind=kind)], [ViewData(values, np.ones((n, d), bool))])
    state = init_state(ds, Hyperparameters(k_init=k), seed=0)
    state.q_z = GaussianPosterior(z, np.zeros((k, k)))
    state.views[0].q_w = GaussianPosterior(w, np.zeros((k, k)))
    state.views[0].q_tau = GammaPosterior([tau], [1.0])
    return state


class TestPredictView:
    def test_point_mass_fixture(self):
        state = point_mass_state([[2.0]], [[1.0], [-1.0]], tau=1e12)
        means, variances = predict_view(state, [0], 0)
        assert means[0].tolist() == [2.0, -2.0]
        assert np.all(variances > 0)

    def test_zero_latent_maps_to_training_mean(self):
        state = point_mass_state([[0.0]], [[1.0], [2.0]])
        from latentline.longitudinal import Standardizer

        state.standardizers = Standardizer([np.array([5.0, 7.0])], [np.array([2.0, 3.0])])
        means, variances = predict_view(state, [0], 0)
        assert means[0].tolist() == [5.0, 7.0]

    def test_variance_includes_noise_floor(self):
        state = point_mass_state([[1.0]], [[1.0]], tau=4.0)
        _, variances = predict_view(state, [0], 0)
        assert variances[0, 0] == pytest.approx(0.25)

    def test_errors(self):
        state = point_mass_state([[1.0]], [[1.0]])
        with pytest.raises(DataError):
            predict_view(state, [0], 3)
        with pytest.raises(DataError):
            predict_view(state, [5], 0)

    def test_reconstructs_noiseless_converged_fit(self):
        # observed entries of a noiseless, converged fit within 5% relative
        rng = np.random.default_rng(0)
        z = rng.standard_normal((80, 2))
        w = rng.standard_normal((6, 2))
        values = z @ w.T
        ds = validate_dataset([ViewSpec(1, 6)], [ViewData(values, np.ones((80, 6), bool))])
        state, _ = fit(ds, FitOptions(Hyperparameters(k_init=4, max_iter=600)), seed=1)
        means, _ = predict_view(state, np.arange(80), 0)
        denom = np.maximum(np.abs(values), 1e-3)
        rel = np.abs(means - values) / denom
        assert np.median(rel) < 0.05
        assert np.linalg.norm(means - values) < 0.05 * np.linalg.norm(values)


class TestClassifyOnehot:
    def make_indicator_state(self, means_row):
        # point-mass posteriors reproducing the requested predictive means
        z = np.array([[1.0]])
        w = np.array([[m] for m in means_row])
        return point_mass_state(z, w, kind="indicator")

    def test_plain_scores(self):
        state = self.make_indicator_state([0.1, 0.7, 0.2])
        labels, scores = classify_onehot(state, [0], 0)
        assert labels[0] == 1
        assert np.allclose(scores[0], [0.1, 0.7, 0.2])

    def test_tie_breaks_low(self):
        state = self.make_indicator_state([0.5, 0.5, 0.0])
        labels, _ = classify_onehot(state, [0], 0)
        assert labels[0] == 0

    def test_clip_and_renormalize(self):
        state = self.make_indicator_state([-0.2, 0.3, 0.1])
        labels, scores = classify_onehot(state, [0], 0)
        assert np.allclose(scores[0], [0.0, 0.75, 0.25])
        assert labels[0] == 1

    def test_all_zero_goes_uniform(self):
        state = self.make_indicator_state([-0.5, -0.2, -0.1])
        _, scores = classify_onehot(state, [0], 0)
        assert np.allclose(scores[0], [1 / 3, 1 / 3, 1 / 3])

    def test_rescaling_invariance(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            means = rng.random(3)
            base = self.make_indicator_state(means)
            lab_a, _ = classify_onehot(base, [0], 0)
            scaled = self.make_indicator_state((means * rng.uniform(0.1, 0.9)).tolist())
            lab_b, _ = classify_onehot(scaled, [0], 0)
            assert lab_a[0] == lab_b[0]

    def test_requires_indicator_view(self):
        state = point_mass_state([[1.0]], [[1.0]])
        with pytest.raises(DataError):
            classify_onehot(state, [0], 0)


class TestFeatureRelevance:
    def fs_state(self, gamma_means):
        d = len(gamma_means)
        vals = np.random.default_rng(0).standard_normal((4, d))
        ds = validate_dataset(
            [ViewSpec(1, d, feature_selection=True)], [ViewData(vals, np.ones((4, d), bool))]
        )
        state = init_state(ds, Hyperparameters(k_init=2), seed=0)
        state.views[0].q_gamma = GammaPosterior(np.asarray(gamma_means, float), np.ones(d))
        return state

    def test_inverse_gamma_scores(self):
        state = self.fs_state([2.0, 4.0])
        raw = feature_relevance(state, 0, "raw")
        assert raw.scores.tolist() == [0.5, 0.25]
        unit = feature_relevance(state, 0, "unit_sum")
        assert np.allclose(unit.scores, [2 / 3, 1 / 3])

    def test_uniform_when_equal(self):
        state = self.fs_state([3.0, 3.0, 3.0])
        unit = feature_relevance(state, 0, "unit_sum")
        assert np.allclose(unit.scores, 1 / 3)

    def test_unit_sum_normalization(self):
        rng = np.random.default_rng(1)
        state = self.fs_state(rng.uniform(0.5, 5.0, size=6).tolist())
        unit = feature_relevance(state, 0, "unit_sum")
        assert abs(unit.scores.sum() - 1.0) < 1e-12

    def test_row_norm_statistic(self):
        state = self.fs_state([1.0, 1.0])
        state.views[0].q_w = GaussianPosterior(np.array([[3.0, 4.0], [0.0, 0.0]]),
                                               state.views[0].q_w.covariance)
        prof = feature_relevance(state, 0, statistic="row_norm")
        assert prof.scores[0] == pytest.approx(5.0)

    def test_requires_feature_selection(self):
        state = point_mass_state([[1.0]], [[1.0]])
        with pytest.raises(DataError):
            feature_relevance(state, 0)

    def test_signal_features_outrank_noise(self):
        # features 0-1 carry the factor signal, 2-7 are pure noise
        rng = np.random.default_rng(4)
        n, d = 400, 8
        z = rng.standard_normal((n, 1))
        w = np.zeros((d, 1))
        w[:2, 0] = (2.0, -1.5)
        values = z @ w.T + 0.15 * rng.standard_normal((n, d))
        ds = validate_dataset(
            [ViewSpec(1, d, feature_selection=True)], [ViewData(values, np.ones((n, d), bool))]
        )
        state, _ = fit(ds, FitOptions(Hyperparameters(k_init=3, max_iter=200)), seed=0)
        prof = feature_relevance(state, 0, "raw")
        assert prof.scores[:2].mean() > prof.scores[2:].mean()


class TestFactorActivity:
    def test_threshold_rule(self):
        state = point_mass_state([[1.0]], [[1e-7]])
        act = factor_activity(state, threshold=1e-6)
        assert not act.matrix[0, 0]
        act0 = factor_activity(state, threshold=0.0)
        assert act0.matrix.all()

    def test_default_threshold_is_prune_threshold(self):
        state = point_mass_state([[1.0]], [[1.0]])
        act = factor_activity(state)
        assert act.threshold == state.hyper.prune_threshold

    def test_no_dead_factors_after_prune(self):
        rng = np.random.default_rng(2)
        z = rng.standard_normal((60, 2))
        specs, data = [], []
        for m, d in enumerate((5, 4)):
            w = rng.standard_normal((d, 2))
            x = z @ w.T + 0.1 * rng.standard_normal((60, d))
            specs.append(ViewSpec(m + 1, d))
            data.append(ViewData(x, np.ones((60, d), bool)))
        ds = validate_dataset(specs, data)
        state = init_state(ds, Hyperparameters(k_init=6), seed=0)
        for it in range(1, 150):
            state.iteration = it
            sweep(state, ds)
            prune_factors(state)
        act = factor_activity(state)
        assert act.matrix.any(axis=0).all()  # every factor active somewhere

    def test_private_factor_only_in_its_view(self):
        # factor 1 loads on view 1 only; the fitted activity map shows it
        from latentline.synth import SynthConfig, generate

        config = SynthConfig(
            n_subjects=400,
            k_true=2,
            dims=(6, 6),
            active_factors=((0, 1), (0,)),
            snr=50.0,
            seed=3,
        )
        specs, data, truth = generate(config)
        ds = validate_dataset(specs, data)
        state, _ = fit(ds, FitOptions(Hyperparameters(k_init=4, max_iter=400)), seed=0)
        act = factor_activity(state, threshold=1e-2)
        private = [k for k in range(state.k_current) if act.matrix[0, k] and not act.matrix[1, k]]
        assert private, "expected a factor private to the first view"


class TestSubjectTrajectory:
    def fitted_cohort(self, drop_cells=()):
        cat = small_catalog()
        table = full_table(cat, subjects=("s1", "s2"))
        for key in drop_cells:
            table.records.pop(key, None)
        train, test, meta = build_windows(table, WindowLayout())
        std = fit_standardizer(train, meta.specs)
        data = assemble(std.transform(train), std.transform(test))
        ds = validate_dataset(meta.specs, data)
        state, _ = fit(ds, FitOptions(Hyperparameters(k_init=4, max_iter=40)), seed=0)
        state.standardizers = std
        return state, meta, table

    def test_fully_observed_subject(self):
        state, meta, table = self.fitted_cohort()
        points = subject_trajectory(state, meta, table, "s1", "td0")
        observed = [p for p in points if p.month <= 30]
        assert all(p.source == "observed" for p in observed)
        for p in observed:
            assert p.value == table.get("s1", p.month, "td0")

    def test_gap_is_imputed_with_prediction(self):
        state, meta, table = self.fitted_cohort(drop_cells=[("s1", 12, "td0")])
        points = subject_trajectory(state, meta, table, "s1", "td0")
        gap = [p for p in points if p.month == 12][0]
        assert gap.source == "imputed"
        assert gap.std is not None and gap.std > 0
        assert np.isfinite(gap.value)

    def test_diagnosis_scores(self):
        state, meta, table = self.fitted_cohort(drop_cells=[("s1", 18, "dx")])
        points = subject_trajectory(state, meta, table, "s1", "dx")
        by_month = {p.month: p for p in points}
        assert by_month[18].source == "imputed"
        assert by_month[18].class_scores.sum() == pytest.approx(1.0)
        assert by_month[0].source == "observed"

    def test_unknown_subject_or_variable(self):
        state, meta, table = self.fitted_cohort()
        with pytest.raises(DataError):
            subject_trajectory(state, meta, table, "nobody", "td0")
        with pytest.raises(DataError):
            subject_trajectory(state, meta, table, "s1", "nope")
