"""Benchmark harness: the framework against imputer+regressor baselines,
under configurable input-view restrictions.

Single-task mode mirrors the appendix protocol (columns self / MD / MD+self
per task); multitask mode fits all three output views at once. Results go to
a CSV of (method, input_subset, task, metric, value, seed) plus an aligned
text table. Cells run independently; failures are recorded per cell.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .analyze import classify_onehot, predict_view
from .baselines import STRATEGIES, CellMeta, impute, logistic_fit_cv, ridge_fit_cv
from .core import DataError, Hyperparameters, ViewData, ViewSpec, validate_dataset
from .engine import FitOptions, fit
from .longitudinal import (
    SubjectTable,
    WindowLayout,
    WindowMeta,
    assemble,
    build_windows,
    fit_standardizer,
)

TASKS = ("A", "V", "D")
TASK_METRIC = {"A": "mae", "V": "mae", "D": "mauc"}


def worker_count() -> int:
    """Worker cap from LATENTLINE_THREADS (0 or unset = auto)."""
    raw = os.environ.get("LATENTLINE_THREADS", "0")
    try:
        value = int(raw)
    except ValueError:
        value = 0
    if value <= 0:
        return os.cpu_count() or 1
    return value


@dataclass(frozen=True)
class BenchmarkSpec:
    mode: str = "multitask"  # "multitask" | "single_task"
    tasks: tuple = TASKS
    subsets: tuple | None = None  # default: ("all",) or ("self", "MD", "MD+self")
    imputers: tuple = STRATEGIES
    include_sshiba: bool = True
    seeds: tuple = (0,)
    k_init: int | None = 12
    max_iter: int = 600
    folds: int = 10

    def resolved_subsets(self) -> tuple:
        if self.subsets is not None:
            return self.subsets
        return ("all",) if self.mode == "multitask" else ("self", "MD", "MD+self")


@dataclass
class BenchmarkResult:
    records: list = field(default_factory=list)  # dict rows
    errors: list = field(default_factory=list)

    def add(self, method, subset, task, metric, value, seed):
        self.records.append(
            {
                "method": method,
                "input_subset": subset,
                "task": task,
                "metric": metric,
                "value": value,
                "seed": seed,
            }
        )

    def value(self, method, subset, task, seed=None):
        vals = [
            r["value"]
            for r in self.records
            if r["method"] == method
            and r["input_subset"] == subset
            and r["task"] == task
            and (seed is None or r["seed"] == seed)
            and r["value"] is not None
        ]
        if not vals:
            return None
        return float(np.mean(vals))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["method", "input_subset", "task", "metric", "value", "seed"])
            for r in self.records:
                writer.writerow(
                    [r["method"], r["input_subset"], r["task"], r["metric"],
                     "" if r["value"] is None else repr(r["value"]), r["seed"]]
                )

    def format_table(self) -> str:
        """Aligned text table: per task, rows = methods, columns = subsets."""
        lines = []
        tasks = sorted({r["task"] for r in self.records})
        subsets = []
        for r in self.records:
            if r["input_subset"] not in subsets:
                subsets.append(r["input_subset"])
        methods = []
        for r in self.records:
            if r["method"] not in methods:
                methods.append(r["method"])
        for task in tasks:
            metric = TASK_METRIC[task]
            lines.append(f"task {task} ({metric}, mean over seeds)")
            header = ["method".ljust(22)] + [s.rjust(12) for s in subsets]
            lines.append("  " + " ".join(header))
            for method in methods:
                cells = []
                for s in subsets:
                    v = self.value(method, s, task)
                    cells.append(("--" if v is None else f"{v:.4f}").rjust(12))
                if any(c.strip() != "--" for c in cells):
                    lines.append("  " + method.ljust(22) + " " + " ".join(cells))
            lines.append("")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# input-view restriction


def _task_variable(meta: WindowMeta, task: str) -> str:
    return {
        "A": meta.catalog.adas,
        "V": meta.catalog.ventricle,
        "D": meta.catalog.diagnosis,
    }[task]


def _keep_column(meta: WindowMeta, task: str, subset: str, variable: str) -> bool:
    if subset in ("all", "MD+self"):
        return True
    target = _task_variable(meta, task)
    if subset == "self":
        return variable == target
    if subset == "MD":
        return variable != target
    raise DataError(f"unknown input subset {subset!r}")


@dataclass
class RestrictedViews:
    specs: list[ViewSpec]
    columns: list
    train: list[ViewData]
    test: list[ViewData]
    output_map: dict  # task -> restricted output view index
    eval_targets: dict  # task -> (values, mask)
    meta: WindowMeta


def restrict_views(
    train_views: list[ViewData],
    test_views: list[ViewData],
    meta: WindowMeta,
    task: str,
    subset: str,
    output_tasks: tuple,
) -> RestrictedViews:
    """Column-restrict the input views and keep only the requested outputs.

    Excluded cells are physically dropped so no method can read them.
    """
    out_specs, out_cols, out_train, out_test = [], [], [], []
    output_map, eval_targets = {}, {}
    task_of_output = {}
    for v in meta.output_view_indices():
        name = meta.columns[v][0].variable
        for t in TASKS:
            if _task_variable(meta, t) == name:
                task_of_output[v] = t
    new_id = 1
    for v, spec in enumerate(meta.specs):
        if spec.role == "output":
            t = task_of_output[v]
            if t not in output_tasks:
                continue
            keep = list(range(spec.dim))
        else:
            keep = [
                c
                for c, col in enumerate(meta.columns[v])
                if _keep_column(meta, task, subset, col.variable)
            ]
            if not keep:
                continue
        out_specs.append(
            ViewSpec(
                view_id=new_id,
                dim=len(keep),
                kind=spec.kind,
                feature_selection=spec.feature_selection and len(keep) > 0,
                learning_rate=spec.learning_rate,
                role=spec.role,
                name=spec.name,
            )
        )
        out_cols.append([meta.columns[v][c] for c in keep])
        out_train.append(ViewData(train_views[v].values[:, keep], train_views[v].mask[:, keep]))
        out_test.append(ViewData(test_views[v].values[:, keep], test_views[v].mask[:, keep]))
        if spec.role == "output":
            output_map[task_of_output[v]] = len(out_specs) - 1
            eval_targets[task_of_output[v]] = meta.eval_targets[v]
        new_id += 1
    return RestrictedViews(
        out_specs, out_cols, out_train, out_test, output_map, eval_targets, meta
    )


# ---------------------------------------------------------------------------
# method runners


def _fit_sshiba(rv: RestrictedViews, spec: BenchmarkSpec, seed: int):
    std = fit_standardizer(rv.train, rv.specs)
    train_std = std.transform(rv.train)
    test_std = std.transform(rv.test)
    data = assemble(train_std, test_std)
    dataset = validate_dataset(rv.specs, data)
    hyper = Hyperparameters(k_init=spec.k_init, max_iter=spec.max_iter, seed=seed)
    state, report = fit(dataset, FitOptions(hyper), seed=seed)
    state.standardizers = std
    return state, report, dataset


def _sshiba_task_score(state, rv: RestrictedViews, task: str, n_train: int):
    view = rv.output_map[task]
    values, mask = rv.eval_targets[task]
    rows = np.arange(n_train, n_train + values.shape[0])
    if task == "D":
        keep = mask.all(axis=1)
        if keep.sum() == 0:
            raise DataError("no scored test samples")
        _, scores = classify_onehot(state, rows[keep], view)
        labels = np.argmax(values[keep], axis=1)
        from .metrics import mauc

        return mauc(scores, labels)
    keep = mask[:, 0]
    if keep.sum() == 0:
        raise DataError("no scored test samples")
    means, _ = predict_view(state, rows[keep], view)
    from .metrics import mae

    return mae(values[keep, 0], means[:, 0])


def _baseline_matrices(rv: RestrictedViews, task: str):
    """Flattened input features, target vectors and temporal metadata."""
    meta = rv.meta
    input_views = [v for v, s in enumerate(rv.specs) if s.role == "input"]
    X_tr = np.column_stack([rv.train[v].values for v in input_views])
    M_tr = np.column_stack([rv.train[v].mask for v in input_views])
    X_te = np.column_stack([rv.test[v].values for v in input_views])
    M_te = np.column_stack([rv.test[v].mask for v in input_views])

    variables, offsets = [], []
    for v in input_views:
        for col in rv.columns[v]:
            variables.append(col.variable)
            offsets.append(col.offset)
    variables = np.array(variables, dtype=object)

    def cell_meta(samples):
        subjects = np.array([s.subject for s in samples], dtype=object)
        months = np.zeros((len(samples), len(variables)))
        for r, s in enumerate(samples):
            for c, off in enumerate(offsets):
                months[r, c] = -1e9 if off is None else s.target_month + off
        return CellMeta(subjects, months, variables)

    meta_tr = cell_meta(meta.train_samples)
    meta_te = cell_meta(meta.test_samples)

    # training targets: observed output cells of the train samples
    view = rv.output_map[task]
    if task == "D":
        mask_rows = rv.train[view].mask.all(axis=1)
        y_tr = np.argmax(rv.train[view].values, axis=1)[mask_rows]
    else:
        mask_rows = rv.train[view].mask[:, 0]
        y_tr = rv.train[view].values[mask_rows, 0]
    return X_tr, M_tr, X_te, M_te, meta_tr, meta_te, mask_rows, y_tr


def _run_baseline(rv: RestrictedViews, task: str, imputer: str, folds: int, seed: int):
    X_tr, M_tr, X_te, M_te, meta_tr, meta_te, rows, y_tr = _baseline_matrices(rv, task)
    if rows.sum() < folds:
        raise DataError("not enough labelled training windows")
    filled_tr = impute(X_tr, M_tr, X_tr, M_tr, imputer, meta_tr)[rows]
    filled_te = impute(X_tr, M_tr, X_te, M_te, imputer, meta_te)

    values, mask = rv.eval_targets[task]
    if task == "D":
        keep = mask.all(axis=1)
        if keep.sum() == 0:
            raise DataError("no scored test samples")
        model = logistic_fit_cv(filled_tr, y_tr, folds=folds, seed=seed)
        scores = model.scores(filled_te[keep])
        # one column per class index 0..2 regardless of training class set
        full = np.zeros((scores.shape[0], 3))
        for j, c in enumerate(model.classes):
            full[:, int(c)] = scores[:, j]
        labels = np.argmax(values[keep], axis=1)
        from .metrics import mauc

        return mauc(full, labels)
    keep = mask[:, 0]
    if keep.sum() == 0:
        raise DataError("no scored test samples")
    model = ridge_fit_cv(filled_tr, y_tr, folds=folds, seed=seed)
    pred = model.predict(filled_te[keep])
    from .metrics import mae

    return mae(values[keep, 0], pred)


# ---------------------------------------------------------------------------
# harness


def _rebuild_eval_targets(meta: WindowMeta, eval_table: SubjectTable) -> None:
    """Score each test sample against a reference table (a synthetic cohort's
    complete ground truth) instead of the observed table's surviving cells."""
    from .longitudinal import encode_diagnosis

    d_name = meta.catalog.diagnosis
    for v in meta.output_view_indices():
        spec = meta.specs[v]
        n = len(meta.test_samples)
        vals = np.zeros((n, spec.dim))
        msk = np.zeros((n, spec.dim), dtype=bool)
        for r, info in enumerate(meta.test_samples):
            month = meta.layout.test_target
            if spec.kind == "indicator":
                enc_v, enc_m = encode_diagnosis([eval_table.get(info.subject, month, d_name)])
                vals[r], msk[r] = enc_v[0], enc_m[0]
            else:
                val = eval_table.get(info.subject, month, meta.columns[v][0].variable)
                if val is not None:
                    vals[r, 0], msk[r, 0] = float(val), True
        meta.eval_targets[v] = (vals, msk)


def run_benchmark(
    spec: BenchmarkSpec,
    table: SubjectTable | None = None,
    table_factory=None,
    layout: WindowLayout | None = None,
    parallel: bool = False,
    eval_table: SubjectTable | None = None,
) -> BenchmarkResult:
    """Evaluate every (method, subset, task) cell for every seed.

    Either a fixed table or a per-seed factory must be given; the factory may
    return (observed, ground_truth) to score against complete synthetic
    targets. Failures are recorded in result.errors, never raised.
    """
    if table is None and table_factory is None:
        raise DataError("need a subject table or a table factory")
    layout = layout or WindowLayout()
    result = BenchmarkResult()

    jobs = []  # (cells, callable) where cells lists (method, subset, task, seed)
    for seed in spec.seeds:
        truth = eval_table
        if table_factory is not None:
            current = table_factory(seed)
            if isinstance(current, tuple):
                current, truth = current
        else:
            current = table
        train_views, test_views, meta = build_windows(current, layout)
        if truth is not None:
            _rebuild_eval_targets(meta, truth)
        n_train = len(meta.train_samples)
        for subset in spec.resolved_subsets():
            if spec.mode == "multitask":
                # one semi-supervised fit covers every task of the subset
                rv_all = restrict_views(
                    train_views, test_views, meta, spec.tasks[0], subset, tuple(spec.tasks)
                )
                if spec.include_sshiba:
                    cells = [("sshiba", subset, t, seed) for t in spec.tasks]
                    jobs.append((cells, _make_sshiba_job(rv_all, spec, seed, spec.tasks, n_train)))
                task_views = {t: rv_all for t in spec.tasks}
            else:
                task_views = {
                    t: restrict_views(train_views, test_views, meta, t, subset, (t,))
                    for t in spec.tasks
                }
                if spec.include_sshiba:
                    for t in spec.tasks:
                        jobs.append(
                            (
                                [("sshiba", subset, t, seed)],
                                _make_sshiba_job(task_views[t], spec, seed, (t,), n_train),
                            )
                        )
            for task in spec.tasks:
                reg = "logistic" if task == "D" else "ridge"
                for imputer in spec.imputers:
                    jobs.append(
                        (
                            [(f"{reg}+{imputer}", subset, task, seed)],
                            _make_baseline_job(task_views[task], task, imputer, spec.folds, seed),
                        )
                    )

    if parallel and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=worker_count()) as pool:
            outcomes = list(pool.map(lambda kv: _safe(kv[1]), jobs))
    else:
        outcomes = [_safe(job) for _, job in jobs]

    for (cells, _), (values, err) in zip(jobs, outcomes):
        for i, (method, subset, task, seed) in enumerate(cells):
            value = None if values is None else values[i]
            result.add(method, subset, task, TASK_METRIC[task], value, seed)
        if err is not None:
            result.errors.append({"cells": cells, "error": err})
    return result


def _safe(job):
    try:
        return job(), None
    except Exception as exc:  # recorded per cell, not fatal
        return None, f"{type(exc).__name__}: {exc}"


def _make_sshiba_job(rv: RestrictedViews, spec: BenchmarkSpec, seed: int, tasks: tuple, n_train: int):
    def job():
        state, _, _ = _fit_sshiba(rv, spec, seed)
        return [_sshiba_task_score(state, rv, t, n_train) for t in tasks]

    return job


def _make_baseline_job(rv: RestrictedViews, task: str, imputer: str, folds: int, seed: int):
    def job():
        return [_run_baseline(rv, task, imputer, folds, seed)]

    return job
