"""Command-line interface.

Subcommands: fit, predict, impute, report (relevance | factors | trajectory),
synth, bench. Exit codes: 0 success, 2 input error, 3 numerical failure;
diagnostics go to stderr. Every command is deterministic given its flags,
files and --seed. Report commands write machine-readable CSV, an aligned
text rendering and a PNG figure side by side.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from .analyze import (
    classify_onehot,
    factor_activity,
    feature_relevance,
    predict_view,
    subject_trajectory,
)
from .bench import TASKS, BenchmarkSpec, run_benchmark
from .core import DataError, Hyperparameters, LearningRate, NumericalError, validate_dataset
from .engine import FitOptions, fit
from .longitudinal import (
    DIAGNOSIS_LABELS,
    ColumnInfo,
    SampleInfo,
    VariableCatalog,
    WindowLayout,
    WindowMeta,
    assemble,
    build_windows,
    fit_standardizer,
    load_catalog,
    load_csv,
    save_catalog,
    save_csv,
)
from .persist import load_model, save_model
from .synth import CohortConfig, synthetic_cohort


def _parse_layout(text: str) -> WindowLayout:
    if text in ("default", ""):
        return WindowLayout()
    kwargs = {}
    keys = {"step": "step", "lags": "n_lags", "test": "test_target"}
    for part in text.split(","):
        key, _, value = part.partition("=")
        if key.strip() not in keys:
            raise DataError(f"unknown layout key {key.strip()!r} (use step/lags/test)")
        kwargs[keys[key.strip()]] = int(value)
    return WindowLayout(**kwargs)


def _parse_lr_overrides(items) -> dict[int, LearningRate]:
    overrides = {}
    for item in items or []:
        view_s, _, rate_s = item.partition("=")
        try:
            view_id = int(view_s)
        except ValueError:
            raise DataError(f"bad --lr-view {item!r} (expected m=rho or m=inv)") from None
        overrides[view_id] = LearningRate.parse(rate_s)
    return overrides


def _layout_meta(meta: WindowMeta) -> dict:
    return {
        "catalog": {"names": list(meta.catalog.names), "groups": list(meta.catalog.groups)},
        "layout": {
            "step": meta.layout.step,
            "n_lags": meta.layout.n_lags,
            "test_target": meta.layout.test_target,
        },
        "columns": [
            [{"variable": c.variable, "offset": c.offset} for c in cols]
            for cols in meta.columns
        ],
        "train_samples": [
            {"subject": s.subject, "window": s.window, "target_month": s.target_month}
            for s in meta.train_samples
        ],
        "test_samples": [
            {"subject": s.subject, "target_month": s.target_month}
            for s in meta.test_samples
        ],
    }


def _meta_from_model(header_meta: dict, specs) -> WindowMeta:
    catalog = VariableCatalog(
        tuple(header_meta["catalog"]["names"]), tuple(header_meta["catalog"]["groups"])
    )
    lay = header_meta["layout"]
    layout = WindowLayout(lay["step"], lay["n_lags"], lay["test_target"])
    columns = [
        [ColumnInfo(c["variable"], c["offset"]) for c in cols]
        for cols in header_meta["columns"]
    ]
    train_samples = [
        SampleInfo(s["subject"], "train", s["window"], s["target_month"])
        for s in header_meta["train_samples"]
    ]
    test_samples = [
        SampleInfo(s["subject"], "test", 0, s["target_month"])
        for s in header_meta["test_samples"]
    ]
    return WindowMeta(catalog, layout, list(specs), columns, train_samples, test_samples)


def _prepare_fit(args):
    catalog = load_catalog(args.catalog)
    table = load_csv(args.data, catalog, allow_extra=args.allow_extra)
    layout = _parse_layout(args.layout)
    train_views, test_views, meta = build_windows(table, layout)
    overrides = _parse_lr_overrides(args.lr_view)
    if overrides:
        import dataclasses

        meta.specs = [
            dataclasses.replace(s, learning_rate=overrides.get(s.view_id, s.learning_rate))
            for s in meta.specs
        ]
    std = fit_standardizer(train_views, meta.specs)
    data = assemble(std.transform(train_views), std.transform(test_views))
    dataset = validate_dataset(meta.specs, data)
    return table, meta, std, dataset


def cmd_fit(args) -> int:
    table, meta, std, dataset = _prepare_fit(args)
    hyper = Hyperparameters(
        k_init=args.k_init,
        max_iter=args.max_iter,
        elbo_rel_tol=args.tol,
        seed=args.seed,
    )
    state, report = fit(dataset, FitOptions(hyper), seed=args.seed)
    state.standardizers = std
    save_model(state, args.out, meta=_layout_meta(meta))
    print(f"fit: tol={args.tol:g} max_iter={args.max_iter}")
    print(
        f"halted_on={report.halted_on} iterations={report.iterations} "
        f"k_final={report.k_final} elbo={report.elbo_trace[-1]:.6f}"
    )
    print(f"model written to {args.out}")
    return 0


def _load_model_and_meta(model_path):
    state, header_meta = load_model(model_path)
    meta = _meta_from_model(header_meta, state.specs)
    return state, meta


def cmd_predict(args) -> int:
    state, meta = _load_model_and_meta(args.model)
    table = load_csv(args.data, meta.catalog, allow_extra=args.allow_extra)
    if sorted({s.subject for s in meta.test_samples}) != table.subjects:
        raise DataError("data subjects do not match the fitted model")
    view_ids = [int(v) for v in args.views.split(",")]
    n_train = len(meta.train_samples)
    rows = np.arange(n_train, n_train + len(meta.test_samples))
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject_id", "view", "column", "mean", "variance", "label"])
        for vid in view_ids:
            v = state.view_by_id(vid)
            means, variances = predict_view(state, rows, v)
            labels = None
            if state.specs[v].kind == "indicator":
                lab_idx, _ = classify_onehot(state, rows, v)
                labels = [DIAGNOSIS_LABELS[i] for i in lab_idx]
            for r, info in enumerate(meta.test_samples):
                for c in range(state.specs[v].dim):
                    writer.writerow(
                        [
                            info.subject,
                            vid,
                            c,
                            repr(float(means[r, c])),
                            repr(float(variances[r, c])),
                            labels[r] if labels is not None else "",
                        ]
                    )
    print(f"predictions written to {args.out}")
    return 0


def cmd_impute(args) -> int:
    state, meta = _load_model_and_meta(args.model)
    table = load_csv(args.data, meta.catalog, allow_extra=args.allow_extra)
    n_imputed = 0
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject_id", "month", "variable", "value", "source"])
        for subject in table.subjects:
            for variable in meta.catalog.names:
                if meta.catalog.group_of(variable) == "TI":
                    val = table.get(subject, 0, variable)
                    if val is not None:
                        writer.writerow([subject, 0, variable, repr(float(val)), "observed"])
                    continue
                points = subject_trajectory(state, meta, table, subject, variable)
                is_diag = variable == meta.catalog.diagnosis
                for p in points:
                    value = DIAGNOSIS_LABELS[int(p.value)] if is_diag else repr(float(p.value))
                    writer.writerow([subject, p.month, variable, value, p.source])
                    n_imputed += p.source == "imputed"
    print(f"completed table written to {args.out} ({n_imputed} imputed cells)")
    return 0


def _report_outputs(prefix: str) -> tuple[str, str, str]:
    return f"{prefix}.csv", f"{prefix}.txt", f"{prefix}.png"


def cmd_report_relevance(args) -> int:
    state, meta = _load_model_and_meta(args.model)
    v = state.view_by_id(args.view)
    profile_raw = feature_relevance(state, v, "raw", args.statistic)
    profile_sum = feature_relevance(state, v, "unit_sum", args.statistic)
    names = [
        c.variable if c.offset is None else f"{c.variable}[t{c.offset:+d}]"
        for c in meta.columns[v]
    ]
    csv_path, txt_path, png_path = _report_outputs(args.out)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["feature", "relevance_raw", "relevance_unit_sum"])
        for name, raw, unit in zip(names, profile_raw.scores, profile_sum.scores):
            writer.writerow([name, repr(float(raw)), repr(float(unit))])
    width = max(len(n) for n in names)
    lines = [f"feature relevance, view {args.view} ({args.statistic})"]
    for name, raw, unit in zip(names, profile_raw.scores, profile_sum.scores):
        lines.append(f"  {name.ljust(width)}  {raw:12.6g}  {unit:8.4f}")
    with open(txt_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    from .plots import plot_relevance

    plot_relevance(profile_sum, names, png_path, title=f"view {args.view} relevance")
    print("\n".join(lines))
    print(f"written: {csv_path}, {txt_path}, {png_path}")
    return 0


def cmd_report_factors(args) -> int:
    state, meta = _load_model_and_meta(args.model)
    activity = factor_activity(state, args.threshold)
    names = [s.name or f"view {s.view_id}" for s in state.specs]
    roles = [s.role for s in state.specs]
    csv_path, txt_path, png_path = _report_outputs(args.out)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["view"] + [f"factor_{k+1}" for k in range(state.k_current)])
        for name, row in zip(names, activity.matrix):
            writer.writerow([name] + [int(x) for x in row])
    width = max(len(n) for n in names)
    lines = [f"factor activity (threshold {activity.threshold:g})"]
    for name, role, row in zip(names, roles, activity.matrix):
        cells = "".join("#" if x else "." for x in row)
        lines.append(f"  {name.ljust(width)} {role[:3]}  {cells}")
    with open(txt_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    from .plots import plot_factor_activity

    plot_factor_activity(activity, names, roles, png_path)
    print("\n".join(lines))
    print(f"written: {csv_path}, {txt_path}, {png_path}")
    return 0


def cmd_report_trajectory(args) -> int:
    state, meta = _load_model_and_meta(args.model)
    table = load_csv(args.data, meta.catalog, allow_extra=args.allow_extra)
    variable = args.variable or meta.catalog.diagnosis
    points = subject_trajectory(state, meta, table, args.subject, variable)
    is_diag = variable == meta.catalog.diagnosis
    csv_path, txt_path, png_path = _report_outputs(args.out)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = ["month", "value", "source", "std"]
        if is_diag:
            header += [f"p_{lab}" for lab in DIAGNOSIS_LABELS]
        writer.writerow(header)
        for p in points:
            value = DIAGNOSIS_LABELS[int(p.value)] if is_diag else repr(float(p.value))
            row = [p.month, value, p.source, "" if p.std is None else repr(float(p.std))]
            if is_diag:
                row += [repr(float(x)) for x in p.class_scores]
            writer.writerow(row)
    lines = [f"{variable} trajectory for {args.subject}"]
    for p in points:
        if is_diag:
            scores = " ".join(f"{lab}={x:.3f}" for lab, x in zip(DIAGNOSIS_LABELS, p.class_scores))
            lines.append(f"  month {p.month:3d}  {DIAGNOSIS_LABELS[int(p.value)]:>4} ({p.source}) {scores}")
        else:
            sd = "" if p.std is None else f" +- {2 * p.std:.4g}"
            lines.append(f"  month {p.month:3d}  {p.value:12.6g} ({p.source}){sd}")
    with open(txt_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    from .plots import plot_trajectory

    plot_trajectory(points, variable, args.subject, png_path, is_diagnosis=is_diag)
    print("\n".join(lines))
    print(f"written: {csv_path}, {txt_path}, {png_path}")
    return 0


def cmd_synth(args) -> int:
    config = CohortConfig(
        n_subjects=args.subjects,
        dropout_rate=args.dropout,
        output_dropout_rate=args.output_dropout,
        mcar_rate=args.mcar,
        output_private_weight=args.private,
        seed=args.seed,
    )
    observed, complete = synthetic_cohort(config)
    os.makedirs(args.out, exist_ok=True)
    cohort_path = os.path.join(args.out, "cohort.csv")
    catalog_path = os.path.join(args.out, "catalog.csv")
    complete_path = os.path.join(args.out, "complete.csv")
    save_csv(observed, cohort_path)
    save_catalog(observed.catalog, catalog_path)
    save_csv(complete, complete_path)
    print(f"cohort written to {cohort_path} ({args.subjects} subjects)")
    print(f"catalog written to {catalog_path}")
    print(f"ground truth written to {complete_path}")
    return 0


def cmd_bench(args) -> int:
    mode = {"multitask": "multitask", "appendixA": "single_task"}.get(args.spec)
    if mode is None:
        raise DataError(f"unknown benchmark spec {args.spec!r} (multitask or appendixA)")
    seeds = tuple(int(s) for s in args.seeds.split(","))
    tasks = tuple(args.tasks.split(",")) if args.tasks else TASKS
    for t in tasks:
        if t not in TASKS:
            raise DataError(f"unknown task {t!r}")
    spec = BenchmarkSpec(
        mode=mode, tasks=tasks, seeds=seeds, k_init=args.k_init, max_iter=args.max_iter
    )
    if args.data:
        if not args.catalog:
            raise DataError("--data requires --catalog")
        catalog = load_catalog(args.catalog)
        table = load_csv(args.data, catalog, allow_extra=args.allow_extra)
        result = run_benchmark(spec, table=table, parallel=args.parallel)
    elif args.synthetic != "default":
        raise DataError(f"unknown synthetic preset {args.synthetic!r}")
    else:
        def factory(seed):
            # observed cohort plus complete records for ground-truth scoring
            return synthetic_cohort(
                CohortConfig(
                    n_subjects=args.subjects,
                    dropout_rate=args.dropout,
                    output_dropout_rate=args.output_dropout,
                    mcar_rate=args.mcar,
                    output_private_weight=args.private,
                    seed=seed,
                )
            )

        result = run_benchmark(spec, table_factory=factory, parallel=args.parallel)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "results.csv")
    txt_path = os.path.join(args.out, "table.txt")
    result.to_csv(csv_path)
    table_text = result.format_table()
    with open(txt_path, "w", encoding="utf-8") as fh:
        fh.write(table_text)
    print(table_text)
    if result.errors:
        print(f"{len(result.errors)} cell(s) failed:", file=sys.stderr)
        for err in result.errors:
            print(f"  {err['cells']}: {err['error']}", file=sys.stderr)
    print(f"written: {csv_path}, {txt_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latentline",
        description="Sparse multi-view Bayesian factor analysis for longitudinal forecasting",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the model on a long-format cohort CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--layout", default="default", help="default or step=6,lags=5,test=36")
    p.add_argument("--k-init", type=int, default=None)
    p.add_argument("--max-iter", type=int, default=50_000)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr-view", action="append", metavar="M=RHO|inv",
                   help="override one view's learning rate (repeatable)")
    p.add_argument("--allow-extra", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="posterior predictions for the test samples")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--views", default="12,13,14")
    p.add_argument("--allow-extra", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("impute", help="completed long-format table with source flags")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--allow-extra", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_impute)

    rep = sub.add_parser("report", help="interpretability reports (CSV + text + figure)")
    rsub = rep.add_subparsers(dest="report_command", required=True)

    p = rsub.add_parser("relevance", help="per-feature relevance of one view")
    p.add_argument("--model", required=True)
    p.add_argument("--view", type=int, required=True)
    p.add_argument("--statistic", choices=("inverse_gamma", "row_norm"), default="inverse_gamma")
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_report_relevance)

    p = rsub.add_parser("factors", help="latent factor activity matrix")
    p.add_argument("--model", required=True)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_report_factors)

    p = rsub.add_parser("trajectory", help="per-month observed/imputed series")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--subject", required=True)
    p.add_argument("--variable", default=None, help="defaults to the diagnosis")
    p.add_argument("--allow-extra", action="store_true")
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_report_trajectory)

    p = sub.add_parser("synth", help="generate a synthetic longitudinal cohort")
    p.add_argument("--subjects", type=int, default=120)
    p.add_argument("--dropout", type=float, default=0.12)
    p.add_argument("--output-dropout", type=float, default=None,
                   help="dropout rate of the target variables' histories")
    p.add_argument("--mcar", type=float, default=0.10)
    p.add_argument("--private", type=float, default=0.0,
                   help="share of target variance from subject-private trends")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="benchmark against the baseline stack")
    p.add_argument("--spec", default="multitask", help="multitask or appendixA")
    p.add_argument("--synthetic", default="default", help="synthetic cohort preset")
    p.add_argument("--data", default=None)
    p.add_argument("--catalog", default=None)
    p.add_argument("--tasks", default=None, help="comma list from A,V,D")
    p.add_argument("--seeds", default="0")
    p.add_argument("--subjects", type=int, default=100)
    p.add_argument("--dropout", type=float, default=0.15)
    p.add_argument("--output-dropout", type=float, default=0.30)
    p.add_argument("--mcar", type=float, default=0.15)
    p.add_argument("--private", type=float, default=0.5)
    p.add_argument("--k-init", type=int, default=12)
    p.add_argument("--max-iter", type=int, default=400)
    p.add_argument("--parallel", action="store_true")
    p.add_argument("--allow-extra", action="store_true")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except (DataError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
