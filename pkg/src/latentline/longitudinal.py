"""Long-format subject tables and the 14-view rolling-window assembly.

A cohort arrives as (subject, month, variable, value) records plus a catalog
tagging each variable TI, TD, V, A or D. Window assembly turns each subject
into five training samples (targets sliding over months 6..30, the month-30
targets masked) and one test sample targeting month 36, with time-dependent
variables laid out over five lag views and the diagnosis one-hot over five
more. Test samples never expose their target-month values: those stay in the
metadata for evaluation only.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .core import DataError, LearningRate, ViewData, ViewSpec

GROUPS = ("TI", "TD", "V", "A", "D")
DIAGNOSIS_LABELS = ("NC", "MCI", "AD")


@dataclass(frozen=True)
class VariableCatalog:
    """Ordered variable names with group tags."""

    names: tuple
    groups: tuple

    def __post_init__(self):
        if len(self.names) != len(self.groups):
            raise DataError("catalog names/groups length mismatch")
        if len(set(self.names)) != len(self.names):
            raise DataError("duplicate variable in catalog")
        for g in self.groups:
            if g not in GROUPS:
                raise DataError(f"unknown variable group {g!r}")
        for g in ("V", "A", "D"):
            if sum(1 for x in self.groups if x == g) != 1:
                raise DataError(f"catalog needs exactly one {g} variable")
        if not self.of_group("TI") or not self.of_group("TD"):
            raise DataError("catalog needs at least one TI and one TD variable")

    def of_group(self, group: str) -> list[str]:
        return [n for n, g in zip(self.names, self.groups) if g == group]

    def group_of(self, name: str) -> str:
        try:
            return self.groups[self.names.index(name)]
        except ValueError:
            raise DataError(f"unknown variable {name!r}") from None

    @property
    def diagnosis(self) -> str:
        return self.of_group("D")[0]

    @property
    def ventricle(self) -> str:
        return self.of_group("V")[0]

    @property
    def adas(self) -> str:
        return self.of_group("A")[0]


def load_catalog(path) -> VariableCatalog:
    """Parse a catalog file: one `variable,group` per line, UTF-8."""
    names, groups = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected `variable,group`")
            names.append(parts[0])
            groups.append(parts[1])
    return VariableCatalog(tuple(names), tuple(groups))


def save_catalog(catalog: VariableCatalog, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for n, g in zip(catalog.names, catalog.groups):
            fh.write(f"{n},{g}\n")


@dataclass
class SubjectTable:
    """Long-format records keyed by (subject, month, variable).

    Values are floats; the diagnosis variable stores the class index of its
    label (NC=0, MCI=1, AD=2). Missing records may be stored explicitly as
    None or simply absent.
    """

    catalog: VariableCatalog
    records: dict = field(default_factory=dict)  # (subject, month, variable) -> float

    def put(self, subject: str, month: int, variable: str, value: float | None):
        if variable not in self.catalog.names:
            raise DataError(f"unknown variable {variable!r}")
        key = (subject, int(month), variable)
        if key in self.records:
            raise DataError(f"duplicate record {key}")
        if value is not None:
            self.records[key] = float(value)

    def get(self, subject: str, month: int, variable: str) -> float | None:
        return self.records.get((subject, int(month), variable))

    @property
    def subjects(self) -> list[str]:
        return sorted({k[0] for k in self.records})

    def months_of(self, subject: str) -> list[int]:
        return sorted({k[1] for k in self.records if k[0] == subject})


def encode_diagnosis(labels) -> tuple[np.ndarray, np.ndarray]:
    """One-vs-all encoding of NC/MCI/AD labels.

    Accepts label strings, class indices, or None/NaN for missing. Returns
    (values, mask) of shape (N, 3); a missing label masks all three columns.
    """
    n = len(labels)
    values = np.zeros((n, 3))
    mask = np.zeros((n, 3), dtype=bool)
    for i, lab in enumerate(labels):
        if lab is None or (isinstance(lab, float) and math.isnan(lab)):
            continue
        if isinstance(lab, str):
            if lab not in DIAGNOSIS_LABELS:
                raise DataError(f"unknown diagnosis label {lab!r}")
            idx = DIAGNOSIS_LABELS.index(lab)
        else:
            idx = int(lab)
            if idx not in (0, 1, 2):
                raise DataError(f"diagnosis index out of range: {lab!r}")
        values[i, idx] = 1.0
        mask[i, :] = True
    return values, mask


def decode_diagnosis(row: np.ndarray) -> str:
    return DIAGNOSIS_LABELS[int(np.argmax(row))]


def load_csv(path_or_file, catalog: VariableCatalog, allow_extra: bool = False) -> SubjectTable:
    """Parse long-format CSV with header subject_id,month,variable,value.

    Empty value field means missing. Diagnosis values are NC/MCI/AD labels.
    Reports line numbers for malformed rows and both line numbers for
    duplicate keys.
    """
    close = False
    if isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__"):
        fh = open(path_or_file, encoding="utf-8-sig", newline="")
        close = True
    else:
        fh = path_or_file
    table = SubjectTable(catalog)
    seen: dict[tuple, int] = {}
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["subject_id", "month", "variable", "value"]:
            raise DataError("expected header subject_id,month,variable,value")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 4:
                raise DataError(f"line {lineno}: expected 4 fields, got {len(row)}")
            subject, month_s, variable, value_s = (f.strip() for f in row)
            if variable not in catalog.names:
                if allow_extra:
                    continue
                raise DataError(f"line {lineno}: unknown variable {variable!r}")
            try:
                month = int(month_s)
            except ValueError:
                raise DataError(f"line {lineno}: bad month {month_s!r}") from None
            key = (subject, month, variable)
            if key in seen:
                raise DataError(
                    f"line {lineno}: duplicate of line {seen[key]} for {key}"
                )
            seen[key] = lineno
            if value_s == "":
                continue
            if catalog.group_of(variable) == "D":
                if value_s not in DIAGNOSIS_LABELS:
                    raise DataError(f"line {lineno}: unknown diagnosis label {value_s!r}")
                table.records[key] = float(DIAGNOSIS_LABELS.index(value_s))
            else:
                try:
                    table.records[key] = float(value_s)
                except ValueError:
                    raise DataError(f"line {lineno}: bad value {value_s!r}") from None
    finally:
        if close:
            fh.close()
    return table


def save_csv(table: SubjectTable, path_or_file) -> None:
    """Serialize observed records, diagnosis indices back to labels."""
    close = False
    if isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__"):
        fh = open(path_or_file, "w", encoding="utf-8", newline="")
        close = True
    else:
        fh = path_or_file
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject_id", "month", "variable", "value"])
        for (subject, month, variable), value in sorted(table.records.items()):
            if table.catalog.group_of(variable) == "D":
                writer.writerow([subject, month, variable, DIAGNOSIS_LABELS[int(value)]])
            else:
                writer.writerow([subject, month, variable, repr(float(value))])
    finally:
        if close:
            fh.close()


# ---------------------------------------------------------------------------
# window layout


@dataclass(frozen=True)
class WindowLayout:
    """Sliding-window configuration with the reference-protocol defaults.

    Lag offsets run t-30 .. t-6 relative to each sample's target month t;
    train targets slide over 6..30 with the month-30 sample's outputs masked;
    the test sample targets month 36 but may only use inputs up to month 24
    (a full year of separation).
    """

    step: int = 6
    n_lags: int = 5
    test_target: int = 36

    def __post_init__(self):
        if self.step < 1 or self.n_lags < 1:
            raise DataError("step and n_lags must be >= 1")
        if self.test_target < (self.n_lags + 1) * self.step:
            raise DataError("test target too early for the lag window")

    @property
    def lag_offsets(self) -> tuple:
        """Strictly increasing month offsets, e.g. (-30, -24, -18, -12, -6)."""
        return tuple(-self.step * (self.n_lags - i) for i in range(self.n_lags))

    @property
    def train_targets(self) -> tuple:
        return tuple(self.step * (j + 1) for j in range(self.n_lags))

    @property
    def masked_train_target(self) -> int:
        return self.train_targets[-1]

    @property
    def test_max_input_month(self) -> int:
        return self.test_target - 2 * self.step


@dataclass(frozen=True)
class SampleInfo:
    subject: str
    kind: str  # "train" | "test"
    window: int  # 1..n_lags for train, 0 for test
    target_month: int


@dataclass(frozen=True)
class ColumnInfo:
    variable: str
    offset: int | None  # month offset from the target; None = time-independent


@dataclass
class WindowMeta:
    """Everything needed to interpret the assembled views."""

    catalog: VariableCatalog
    layout: WindowLayout
    specs: list[ViewSpec]
    columns: list[list[ColumnInfo]]  # per view
    train_samples: list[SampleInfo]
    test_samples: list[SampleInfo]
    # Ground-truth test targets, kept out of the model's reach:
    # view index -> (values, mask) aligned with test_samples.
    eval_targets: dict = field(default_factory=dict)

    @property
    def samples(self) -> list[SampleInfo]:
        return self.train_samples + self.test_samples

    def output_view_indices(self) -> list[int]:
        return [i for i, s in enumerate(self.specs) if s.role == "output"]

    def cell_month(self, sample: SampleInfo, view: int, col: int) -> int | None:
        info = self.columns[view][col]
        if info.offset is None:
            return None
        return sample.target_month + info.offset


def default_view_specs(catalog: VariableCatalog, layout: WindowLayout) -> tuple[list[ViewSpec], list[list[ColumnInfo]]]:
    """The 14-view layout (for the default 5-lag window).

    View 1: TI. Views 2..6: lagged TD blocks (time-dependent variables plus
    the lagged ventricle and cognitive-score values). Views 7..11: lagged
    one-vs-all diagnosis. Views 12..14: diagnosis / ventricle / score targets.
    Learning rates follow the reference protocol: 1/iter for the diagnosis
    views (lagged and output), 1.0 for the score output, 0.9 elsewhere.
    """
    ti = catalog.of_group("TI")
    td = catalog.of_group("TD") + [catalog.ventricle, catalog.adas]
    n_lags = layout.n_lags
    lr_inv = LearningRate("inverse_iteration")
    lr_09 = LearningRate("constant", 0.9)
    lr_1 = LearningRate("constant", 1.0)

    specs: list[ViewSpec] = []
    columns: list[list[ColumnInfo]] = []

    specs.append(ViewSpec(1, len(ti), "real", True, lr_09, "input", "TI"))
    columns.append([ColumnInfo(v, None) for v in ti])
    for i, off in enumerate(layout.lag_offsets):
        specs.append(ViewSpec(2 + i, len(td), "real", True, lr_09, "input", f"TD[t{off}]"))
        columns.append([ColumnInfo(v, off) for v in td])
    for i, off in enumerate(layout.lag_offsets):
        specs.append(
            ViewSpec(2 + n_lags + i, 3, "indicator", False, lr_inv, "input", f"D[t{off}]")
        )
        columns.append([ColumnInfo(catalog.diagnosis, off) for _ in range(3)])
    out_base = 2 + 2 * n_lags
    specs.append(ViewSpec(out_base, 3, "indicator", False, lr_inv, "output", "D[t]"))
    columns.append([ColumnInfo(catalog.diagnosis, 0) for _ in range(3)])
    specs.append(ViewSpec(out_base + 1, 1, "real", False, lr_09, "output", "V[t]"))
    columns.append([ColumnInfo(catalog.ventricle, 0)])
    specs.append(ViewSpec(out_base + 2, 1, "real", False, lr_1, "output", "A[t]"))
    columns.append([ColumnInfo(catalog.adas, 0)])
    return specs, columns


def _fill_cell(
    table: SubjectTable,
    subject: str,
    month: int | None,
    info: ColumnInfo,
    month_floor: int,
    month_cap: int | None,
) -> tuple[float, bool, int | None]:
    """Value and mask for one cell; diagnosis handled by the caller."""
    if info.offset is None:
        # time-independent: month-0 record
        val = table.get(subject, 0, info.variable)
    else:
        if month is None or month < month_floor or (month_cap is not None and month > month_cap):
            return 0.0, False, None
        val = table.get(subject, month, info.variable)
    if val is None:
        return 0.0, False, None
    return float(val), True, None


def build_windows(
    table: SubjectTable, layout: WindowLayout
) -> tuple[list[ViewData], list[ViewData], WindowMeta]:
    """Assemble train and test samples from a subject table.

    Per subject: n_lags train samples with targets at step..n_lags*step (the
    last one's outputs masked) and one test sample targeting test_target with
    inputs capped at test_max_input_month. Window cells falling before month 0
    are missing. Output order is sorted by subject then window index. The
    test samples' own target values never enter the returned views; they are
    stored in meta.eval_targets.
    """
    subjects = table.subjects
    if not subjects:
        raise DataError("subject table is empty")
    for s in subjects:
        months = table.months_of(s)
        if any(m % layout.step != 0 for m in months):
            raise DataError(f"subject {s}: months must be multiples of {layout.step}")

    specs, columns = default_view_specs(table.catalog, layout)
    n_views = len(specs)
    d_name = table.catalog.diagnosis

    infos: list[SampleInfo] = []
    for s in subjects:
        for j, t in enumerate(layout.train_targets, start=1):
            infos.append(SampleInfo(s, "train", j, t))
    test_infos = [SampleInfo(s, "test", 0, layout.test_target) for s in subjects]

    def build_rows(samples: list[SampleInfo], is_test: bool):
        n = len(samples)
        views = [
            (np.zeros((n, spec.dim)), np.zeros((n, spec.dim), dtype=bool)) for spec in specs
        ]
        for r, info in enumerate(samples):
            cap = layout.test_max_input_month if is_test else None
            for v in range(n_views):
                spec = specs[v]
                vals, msk = views[v]
                if spec.role == "output":
                    if is_test or info.target_month == layout.masked_train_target:
                        continue  # outputs stay missing
                    t_month = info.target_month
                    if spec.kind == "indicator":
                        lab = table.get(info.subject, t_month, d_name)
                        enc_v, enc_m = encode_diagnosis([lab])
                        vals[r], msk[r] = enc_v[0], enc_m[0]
                    else:
                        val = table.get(info.subject, t_month, columns[v][0].variable)
                        if val is not None:
                            vals[r, 0], msk[r, 0] = float(val), True
                    continue
                if spec.kind == "indicator":
                    off = columns[v][0].offset
                    month = info.target_month + off
                    if month < 0 or (cap is not None and month > cap):
                        continue
                    lab = table.get(info.subject, month, d_name)
                    enc_v, enc_m = encode_diagnosis([lab])
                    vals[r], msk[r] = enc_v[0], enc_m[0]
                    continue
                for c, col in enumerate(columns[v]):
                    month = None if col.offset is None else info.target_month + col.offset
                    val, ok, _ = _fill_cell(table, info.subject, month, col, 0, cap)
                    if ok:
                        vals[r, c], msk[r, c] = val, True
        return [ViewData(v, m) for v, m in views]

    train_views = build_rows(infos, is_test=False)
    test_views = build_rows(test_infos, is_test=True)

    meta = WindowMeta(
        catalog=table.catalog,
        layout=layout,
        specs=specs,
        columns=columns,
        train_samples=infos,
        test_samples=test_infos,
    )

    # ground-truth targets for evaluation, outside the modeled views
    for v in meta.output_view_indices():
        spec = specs[v]
        n = len(test_infos)
        vals = np.zeros((n, spec.dim))
        msk = np.zeros((n, spec.dim), dtype=bool)
        for r, info in enumerate(test_infos):
            if spec.kind == "indicator":
                lab = table.get(info.subject, layout.test_target, d_name)
                enc_v, enc_m = encode_diagnosis([lab])
                vals[r], msk[r] = enc_v[0], enc_m[0]
            else:
                val = table.get(info.subject, layout.test_target, columns[v][0].variable)
                if val is not None:
                    vals[r, 0], msk[r, 0] = float(val), True
        meta.eval_targets[v] = (vals, msk)

    if not any(vd.mask.any() for vd in train_views):
        raise DataError("no observed training cells; check catalog/layout")
    return train_views, test_views, meta


def assemble(train_views: list[ViewData], test_views: list[ViewData]) -> list[ViewData]:
    """Stack train and test samples for the semi-supervised fit."""
    out = []
    for tr, te in zip(train_views, test_views):
        out.append(
            ViewData(np.vstack([tr.values, te.values]), np.vstack([tr.mask, te.mask]))
        )
    return out


# ---------------------------------------------------------------------------
# standardization


@dataclass
class Standardizer:
    """Per-feature z-scoring over observed training entries.

    Indicator views are passed through untouched. Zero-variance features keep
    scale 1 so transform/inverse stay exact.
    """

    centers: list[np.ndarray | None]
    scales: list[np.ndarray | None]

    def transform(self, views: list[ViewData]) -> list[ViewData]:
        out = []
        for vd, c, s in zip(views, self.centers, self.scales):
            if c is None:
                out.append(ViewData(vd.values.copy(), vd.mask.copy()))
            else:
                vals = np.where(vd.mask, (vd.values - c) / s, 0.0)
                out.append(ViewData(vals, vd.mask.copy()))
        return out

    def inverse_entry(self, view: int, col: int, value: float) -> float:
        c, s = self.centers[view], self.scales[view]
        if c is None:
            return float(value)
        return float(value * s[col] + c[col])

    def inverse_mean_var(self, view: int, means: np.ndarray, variances: np.ndarray):
        c, s = self.centers[view], self.scales[view]
        if c is None:
            return means, variances
        return means * s + c, variances * s**2


def fit_standardizer(train_views: list[ViewData], specs: list[ViewSpec]) -> Standardizer:
    centers, scales = [], []
    for vd, spec in zip(train_views, specs):
        if spec.kind == "indicator":
            centers.append(None)
            scales.append(None)
            continue
        c = np.zeros(vd.dim)
        s = np.ones(vd.dim)
        for j in range(vd.dim):
            obs = vd.values[vd.mask[:, j], j]
            if obs.size:
                c[j] = float(obs.mean())
                if obs.size > 1 and float(obs.max() - obs.min()) > 0:
                    sd = float(obs.std(ddof=1))
                    if sd > 0:
                        s[j] = sd
        centers.append(c)
        scales.append(s)
    return Standardizer(centers, scales)
