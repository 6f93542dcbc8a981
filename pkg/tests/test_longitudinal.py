import io

import numpy as np
import pytest

from latentline.core import DataError, ViewData, ViewSpec
from latentline.longitudinal import (
    SubjectTable,
    VariableCatalog,
    WindowLayout,
    assemble,
    build_windows,
    encode_diagnosis,
    fit_standardizer,
    load_catalog,
    load_csv,
    save_catalog,
    save_csv,
)


def small_catalog(n_ti=2, n_td=3):
    names = tuple(
        [f"ti{i}" for i in range(n_ti)] + [f"td{i}" for i in range(n_td)] + ["vent", "adas", "dx"]
    )
    groups = tuple(["TI"] * n_ti + ["TD"] * n_td + ["V", "A", "D"])
    return VariableCatalog(names, groups)


def full_table(catalog, subjects=("s1",), months=range(0, 37, 6), value=None):
    """A table observed at every (subject, month, variable)."""
    rng = np.random.default_rng(0)
    table = SubjectTable(catalog)
    for s in subjects:
        for name in catalog.names:
            if catalog.group_of(name) == "TI":
                table.records[(s, 0, name)] = float(rng.standard_normal()) if value is None else value
                continue
            for t in months:
                if catalog.group_of(name) == "D":
                    table.records[(s, t, name)] = float(rng.integers(0, 3))
                else:
                    v = float(rng.standard_normal()) if value is None else value
                    table.records[(s, t, name)] = v
    return table


class TestCatalog:
    def test_requires_one_of_each_output_group(self):
        with pytest.raises(DataError):
            VariableCatalog(("a", "b", "v", "d"), ("TI", "TD", "V", "D"))

    def test_file_roundtrip(self, tmp_path):
        cat = small_catalog()
        path = tmp_path / "catalog.csv"
        save_catalog(cat, path)
        again = load_catalog(path)
        assert again == cat


class TestLoadCsv:
    def test_basic_row(self):
        cat = small_catalog()
        text = "subject_id,month,variable,value\ns1,0,td0,29\n"
        table = load_csv(io.StringIO(text), cat)
        assert table.get("s1", 0, "td0") == 29.0

    def test_empty_value_is_missing(self):
        cat = small_catalog()
        text = "subject_id,month,variable,value\ns1,0,td0,\n"
        table = load_csv(io.StringIO(text), cat)
        assert table.get("s1", 0, "td0") is None

    def test_duplicate_reports_both_lines(self):
        cat = small_catalog()
        text = "subject_id,month,variable,value\ns1,0,td0,29\ns1,0,td0,30\n"
        with pytest.raises(DataError, match=r"line 3: duplicate of line 2"):
            load_csv(io.StringIO(text), cat)

    def test_unknown_variable(self):
        cat = small_catalog()
        text = "subject_id,month,variable,value\ns1,0,nope,1\n"
        with pytest.raises(DataError, match="line 2"):
            load_csv(io.StringIO(text), cat)
        table = load_csv(io.StringIO(text), cat, allow_extra=True)
        assert not table.records

    def test_malformed_row_reports_line(self):
        cat = small_catalog()
        text = "subject_id,month,variable,value\ns1,zero,td0,1\n"
        with pytest.raises(DataError, match="line 2"):
            load_csv(io.StringIO(text), cat)

    def test_diagnosis_labels(self):
        cat = small_catalog()
        text = "subject_id,month,variable,value\ns1,0,dx,MCI\n"
        table = load_csv(io.StringIO(text), cat)
        assert table.get("s1", 0, "dx") == 1.0
        bad = "subject_id,month,variable,value\ns1,0,dx,WAT\n"
        with pytest.raises(DataError, match="label"):
            load_csv(io.StringIO(bad), cat)

    def test_serialize_roundtrip_lossless(self):
        cat = small_catalog()
        table = full_table(cat, subjects=("s1", "s2"))
        buf = io.StringIO()
        save_csv(table, buf)
        buf.seek(0)
        again = load_csv(buf, cat)
        assert again.records == table.records

    def test_crlf_and_bom_accepted(self, tmp_path):
        cat = small_catalog()
        data = tmp_path / "crlf.csv"
        data.write_bytes(
            b"\xef\xbb\xbfsubject_id,month,variable,value\r\ns1,0,td0,29\r\ns1,6,dx,AD\r\n"
        )
        table = load_csv(data, cat)
        assert table.get("s1", 0, "td0") == 29.0
        assert table.get("s1", 6, "dx") == 2.0
        catalog_file = tmp_path / "catalog.csv"
        catalog_file.write_bytes(b"ti0,TI\r\ntd0,TD\r\nvent,V\r\nadas,A\r\ndx,D\r\n")
        loaded = load_catalog(catalog_file)
        assert loaded.names == ("ti0", "td0", "vent", "adas", "dx")


class TestEncodeDiagnosis:
    def test_one_hot(self):
        values, mask = encode_diagnosis(["MCI"])
        assert values.tolist() == [[0.0, 1.0, 0.0]]
        assert mask.all()

    def test_missing(self):
        values, mask = encode_diagnosis([None])
        assert not mask.any()

    def test_roundtrip_all_labels(self):
        values, mask = encode_diagnosis(["NC", "MCI", "AD"])
        assert np.argmax(values, axis=1).tolist() == [0, 1, 2]

    def test_unknown_label(self):
        with pytest.raises(DataError):
            encode_diagnosis(["XX"])


class TestWindowLayout:
    def test_defaults(self):
        lay = WindowLayout()
        assert lay.lag_offsets == (-30, -24, -18, -12, -6)
        assert lay.train_targets == (6, 12, 18, 24, 30)
        assert lay.masked_train_target == 30
        assert lay.test_max_input_month == 24

    def test_validation(self):
        with pytest.raises(DataError):
            WindowLayout(step=0)
        with pytest.raises(DataError):
            WindowLayout(test_target=12)


class TestBuildWindows:
    def test_sample_counts(self):
        cat = small_catalog()
        table = full_table(cat, subjects=("s1", "s2", "s3"))
        train, test, meta = build_windows(table, WindowLayout())
        assert len(meta.train_samples) == 15  # 5 per subject
        assert len(meta.test_samples) == 3
        assert len(meta.specs) == 14

    def test_earliest_window_pattern(self):
        cat = small_catalog()
        table = full_table(cat)
        train, test, meta = build_windows(table, WindowLayout())
        row = 0  # subject s1, window 1, target month 6
        assert meta.train_samples[row].window == 1
        # views 2..5 and 7..10 fully missing; views 6 and 11 observed
        for v in (1, 2, 3, 4, 6, 7, 8, 9):
            assert not train[v].mask[row].any()
        assert train[5].mask[row].all()
        assert train[10].mask[row].all()
        # outputs observed for the earliest window
        for v in (11, 12, 13):
            assert train[v].mask[row].all()

    def test_month30_outputs_masked(self):
        cat = small_catalog()
        table = full_table(cat)
        train, test, meta = build_windows(table, WindowLayout())
        row = 4  # window 5, target month 30
        assert meta.train_samples[row].target_month == 30
        for v in (11, 12, 13):
            assert not train[v].mask[row].any()
        # its input views are fully populated
        for v in range(1, 11):
            assert train[v].mask[row].all()

    def test_no_month36_leakage(self):
        cat = small_catalog()
        # every observed value encodes its month so leaks are detectable
        table = SubjectTable(cat)
        for name in cat.names:
            if cat.group_of(name) == "TI":
                table.records[("s1", 0, name)] = 0.0
                continue
            for t in range(0, 37, 6):
                table.records[("s1", t, name)] = float(t) if cat.group_of(name) != "D" else float(t % 3)
        train, test, meta = build_windows(table, WindowLayout())
        for v, spec in enumerate(meta.specs):
            for vd in (train, test):
                observed = vd[v].values[vd[v].mask]
                if spec.kind == "real" and spec.role != "output":
                    assert not np.any(observed == 36.0)
            # train outputs also never hold month-36 values
            if spec.role == "output" and spec.kind == "real":
                assert not np.any(train[v].values[train[v].mask] == 36.0)
        # test samples expose no observed output cells at all
        for v in meta.output_view_indices():
            assert not test[v].mask.any()
        assert meta.eval_targets[12][0][0, 0] == 36.0  # truth kept aside

    def test_test_window_drops_month30(self):
        cat = small_catalog()
        table = full_table(cat)
        train, test, meta = build_windows(table, WindowLayout())
        # view 6 (lag t-6) and view 11 (D lag t-6) are masked for the test row
        assert not test[5].mask[0].any()
        assert not test[10].mask[0].any()
        # views 2..5 carry months 6..24
        for v in (1, 2, 3, 4):
            assert test[v].mask[0].all()

    def test_translation_consistency(self):
        cat = small_catalog()
        table = full_table(cat, subjects=("s1", "s2"))
        train, test, meta = build_windows(table, WindowLayout())
        lag_views = [1, 2, 3, 4, 5]  # indices of views 2..6
        for s in range(2):
            for j in range(4):  # windows 1..4 against the next window
                row_a = s * 5 + j
                row_b = row_a + 1
                for p in range(1, 5):
                    va, vb = lag_views[p], lag_views[p - 1]
                    assert np.array_equal(train[va].values[row_a], train[vb].values[row_b])
                    assert np.array_equal(train[va].mask[row_a], train[vb].mask[row_b])

    def test_reference_catalog_dimensions(self):
        # 9 TI + 21 TD variables: lag views carry TD plus lagged V and A
        names = tuple(
            [f"ti{i}" for i in range(9)] + [f"td{i}" for i in range(21)] + ["V", "A", "D"]
        )
        groups = tuple(["TI"] * 9 + ["TD"] * 21 + ["V", "A", "D"])
        cat = VariableCatalog(names, groups)
        table = full_table(cat)
        train, test, meta = build_windows(table, WindowLayout())
        dims = [s.dim for s in meta.specs]
        assert dims == [9] + [23] * 5 + [3] * 5 + [3, 1, 1]

    def test_view_roles_and_rates(self):
        cat = small_catalog()
        table = full_table(cat)
        _, _, meta = build_windows(table, WindowLayout())
        rates = {}
        for s in meta.specs:
            if s.learning_rate.kind == "inverse_iteration":
                rates[s.view_id] = "inv"
            else:
                rates[s.view_id] = s.learning_rate.value
        assert all(rates[v] == "inv" for v in range(7, 13))
        assert rates[14] == 1.0
        assert all(rates[v] == 0.9 for v in (1, 2, 3, 4, 5, 6, 13))
        assert [s.feature_selection for s in meta.specs] == [True] * 6 + [False] * 8

    def test_negative_months_missing(self):
        cat = small_catalog()
        table = full_table(cat, months=range(0, 37, 6))
        train, _, meta = build_windows(table, WindowLayout())
        # window 2 (target 12): lags -30..-6 give months -18..6; negatives missing
        row = 1
        assert not train[1].mask[row].any()  # month -18
        assert train[4].mask[row].all()  # month 0

    def test_month_grid_validation(self):
        cat = small_catalog()
        table = SubjectTable(cat)
        table.records[("s1", 5, "td0")] = 1.0
        with pytest.raises(DataError, match="multiples"):
            build_windows(table, WindowLayout())

    def test_assemble_stacks_train_then_test(self):
        cat = small_catalog()
        table = full_table(cat, subjects=("s1", "s2"))
        train, test, meta = build_windows(table, WindowLayout())
        combined = assemble(train, test)
        assert combined[0].n_samples == 12
        assert np.array_equal(combined[0].values[:10], train[0].values)
        assert np.array_equal(combined[0].values[10:], test[0].values)


class TestStandardizer:
    def test_two_point_feature(self):
        vd = ViewData(np.array([[2.0], [4.0]]), np.ones((2, 1), bool))
        spec = ViewSpec(1, 1)
        std = fit_standardizer([vd], [spec])
        assert std.centers[0][0] == 3.0
        assert std.scales[0][0] == pytest.approx(np.sqrt(2.0))

    def test_constant_feature(self):
        vd = ViewData(np.full((3, 1), 7.0), np.ones((3, 1), bool))
        std = fit_standardizer([vd], [ViewSpec(1, 1)])
        assert std.scales[0][0] == 1.0
        out = std.transform([vd])[0]
        assert np.allclose(out.values, 0.0)

    def test_roundtrip_identity(self):
        rng = np.random.default_rng(0)
        vd = ViewData(rng.standard_normal((20, 4)) * 3 + 1, rng.random((20, 4)) > 0.3)
        spec = ViewSpec(1, 4)
        std = fit_standardizer([vd], [spec])
        fwd = std.transform([vd])[0]
        means, variances = std.inverse_mean_var(0, fwd.values, np.zeros_like(fwd.values))
        assert np.allclose(means[vd.mask], vd.values[vd.mask], atol=1e-12)

    def test_indicator_untouched(self):
        vd = ViewData(np.array([[0.0, 1.0], [1.0, 0.0]]), np.ones((2, 2), bool))
        std = fit_standardizer([vd], [ViewSpec(1, 2, kind="indicator")])
        out = std.transform([vd])[0]
        assert np.array_equal(out.values, vd.values)
