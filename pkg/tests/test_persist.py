import numpy as np
import pytest

from latentline.analyze import predict_view
from latentline.core import DataError, Hyperparameters
from latentline.engine import FitOptions, fit
from latentline.longitudinal import WindowLayout, assemble, build_windows, fit_standardizer
from latentline.persist import FORMAT_VERSION, MAGIC, load_model, save_model
from latentline.core import validate_dataset

from helpers import random_dataset
from test_longitudinal import full_table, small_catalog


def fitted_state(seed=0, max_iter=15):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng, n_max=15, m_max=3, d_max=4)
    state, _ = fit(ds, FitOptions(Hyperparameters(k_init=3, max_iter=max_iter)), seed=seed)
    return state


class TestRoundTrip:
    def test_arrays_bit_exact(self, tmp_path):
        state = fitted_state(1)
        path = tmp_path / "model.llm"
        save_model(state, path, meta={"note": "roundtrip"})
        loaded, meta = load_model(path)
        assert meta["note"] == "roundtrip"
        assert np.array_equal(loaded.q_z.mean, state.q_z.mean)
        assert np.array_equal(loaded.q_z.covariance, state.q_z.covariance)
        for a, b in zip(loaded.views, state.views):
            assert np.array_equal(a.q_w.mean, b.q_w.mean)
            assert np.array_equal(a.q_w.covariance, b.q_w.covariance)
            assert np.array_equal(a.q_alpha.rate, b.q_alpha.rate)
            assert np.array_equal(a.q_tau.rate, b.q_tau.rate)
            assert np.array_equal(a.q_miss_mean, b.q_miss_mean)
        assert loaded.k_current == state.k_current
        assert loaded.elbo_trace == state.elbo_trace
        assert [s.learning_rate for s in loaded.specs] == [s.learning_rate for s in state.specs]

    def test_predictions_bit_identical(self, tmp_path):
        for seed in range(4):
            state = fitted_state(seed)
            before = predict_view(state, np.arange(state.n_samples), 0)
            path = tmp_path / f"m{seed}.llm"
            save_model(state, path)
            loaded, _ = load_model(path)
            after = predict_view(loaded, np.arange(loaded.n_samples), 0)
            assert np.array_equal(before[0], after[0])
            assert np.array_equal(before[1], after[1])

    def test_standardizer_roundtrip(self, tmp_path):
        cat = small_catalog()
        table = full_table(cat, subjects=("s1", "s2"))
        train, test, meta = build_windows(table, WindowLayout())
        std = fit_standardizer(train, meta.specs)
        ds = validate_dataset(meta.specs, assemble(std.transform(train), std.transform(test)))
        state, _ = fit(ds, FitOptions(Hyperparameters(k_init=3, max_iter=10)), seed=0)
        state.standardizers = std
        path = tmp_path / "model.llm"
        save_model(state, path)
        loaded, _ = load_model(path)
        before = predict_view(state, [0], 12)
        after = predict_view(loaded, [0], 12)
        assert np.array_equal(before[0], after[0])
        assert np.array_equal(before[1], after[1])


class TestValidation:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.llm"
        path.write_bytes(b"NOT_A_MODEL_FILE" + b"\x00" * 64)
        with pytest.raises(DataError, match="magic"):
            load_model(path)

    def test_bad_version(self, tmp_path):
        state = fitted_state(0)
        path = tmp_path / "model.llm"
        save_model(state, path)
        raw = bytearray(path.read_bytes())
        raw[len(MAGIC)] = FORMAT_VERSION + 1
        path.write_bytes(bytes(raw))
        with pytest.raises(DataError, match="version"):
            load_model(path)

    def test_truncated_payload(self, tmp_path):
        state = fitted_state(0)
        path = tmp_path / "model.llm"
        save_model(state, path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 16])
        with pytest.raises(DataError, match="truncated"):
            load_model(path)
