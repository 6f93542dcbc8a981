"""Model file format: magic + version + JSON header + raw array payload.

Arrays are written row-major as IEEE-754 binary64 (indices as 64-bit signed
integers), little-endian, in manifest order, so save -> load round-trips
bit-exactly and loaded models predict identically to in-memory ones.
"""

from __future__ import annotations

import dataclasses
import json
import struct

import numpy as np

from .core import (
    DataError,
    GammaPosterior,
    GaussianPosterior,
    Hyperparameters,
    LearningRate,
    ModelState,
    ViewPosteriors,
    ViewSpec,
)
from .longitudinal import Standardizer

MAGIC = b"LATENTLINE\x00"
FORMAT_VERSION = 1

_DTYPES = {"f8": "<f8", "i8": "<i8"}


def _spec_to_dict(spec: ViewSpec) -> dict:
    d = dataclasses.asdict(spec)
    d["learning_rate"] = {"kind": spec.learning_rate.kind, "value": spec.learning_rate.value}
    return d


def _spec_from_dict(d: dict) -> ViewSpec:
    lr = LearningRate(d["learning_rate"]["kind"], d["learning_rate"]["value"])
    return ViewSpec(
        view_id=d["view_id"],
        dim=d["dim"],
        kind=d["kind"],
        feature_selection=d["feature_selection"],
        learning_rate=lr,
        role=d["role"],
        name=d.get("name", ""),
    )


def save_model(state: ModelState, path, meta: dict | None = None) -> None:
    """Write the full state; `meta` may carry extra JSON-serializable info
    (layout, catalog, sample identities)."""
    arrays: list[tuple[str, str, np.ndarray]] = []

    def put(name: str, arr: np.ndarray, kind: str = "f8"):
        arrays.append((name, kind, np.ascontiguousarray(arr, dtype=_DTYPES[kind])))

    put("q_z.mean", state.q_z.mean)
    put("q_z.cov", state.q_z.covariance)
    put("elbo_trace", np.asarray(state.elbo_trace, dtype=float))
    for m, vp in enumerate(state.views):
        put(f"v{m}.w.mean", vp.q_w.mean)
        put(f"v{m}.w.cov", vp.q_w.covariance)
        put(f"v{m}.alpha.shape", vp.q_alpha.shape)
        put(f"v{m}.alpha.rate", vp.q_alpha.rate)
        put(f"v{m}.tau.shape", vp.q_tau.shape)
        put(f"v{m}.tau.rate", vp.q_tau.rate)
        if vp.q_gamma is not None:
            put(f"v{m}.gamma.shape", vp.q_gamma.shape)
            put(f"v{m}.gamma.rate", vp.q_gamma.rate)
        put(f"v{m}.miss.mean", vp.q_miss_mean)
        put(f"v{m}.miss.var", vp.q_miss_var)
    std = state.standardizers
    if std is not None:
        for m, (c, s) in enumerate(zip(std.centers, std.scales)):
            if c is not None:
                put(f"std{m}.center", c)
                put(f"std{m}.scale", s)

    header = {
        "hyper": dataclasses.asdict(state.hyper),
        "specs": [_spec_to_dict(s) for s in state.specs],
        "k_current": state.k_current,
        "iteration": state.iteration,
        "has_standardizer": std is not None,
        "std_views": [] if std is None else [m for m, c in enumerate(std.centers) if c is not None],
        "meta": meta or {},
        "manifest": [
            {"name": name, "dtype": kind, "shape": list(arr.shape)} for name, kind, arr in arrays
        ],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, _, arr in arrays:
            fh.write(arr.tobytes(order="C"))


def load_model(path) -> tuple[ModelState, dict]:
    """Read a model file; validates magic, version and all type invariants."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise DataError("not a model file (bad magic)")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise DataError(f"unsupported model format version {version}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        arrays = {}
        for item in header["manifest"]:
            dtype = _DTYPES[item["dtype"]]
            count = int(np.prod(item["shape"])) if item["shape"] else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise DataError("truncated model file")
            arrays[item["name"]] = np.frombuffer(buf, dtype=dtype).reshape(item["shape"]).copy()

    hyper = Hyperparameters(**header["hyper"])
    specs = [_spec_from_dict(d) for d in header["specs"]]
    q_z = GaussianPosterior(arrays["q_z.mean"], arrays["q_z.cov"])
    views = []
    for m, spec in enumerate(specs):
        q_gamma = None
        if f"v{m}.gamma.shape" in arrays:
            q_gamma = GammaPosterior(arrays[f"v{m}.gamma.shape"], arrays[f"v{m}.gamma.rate"])
        views.append(
            ViewPosteriors(
                q_w=GaussianPosterior(arrays[f"v{m}.w.mean"], arrays[f"v{m}.w.cov"]),
                q_alpha=GammaPosterior(arrays[f"v{m}.alpha.shape"], arrays[f"v{m}.alpha.rate"]),
                q_tau=GammaPosterior(arrays[f"v{m}.tau.shape"], arrays[f"v{m}.tau.rate"]),
                q_gamma=q_gamma,
                q_miss_mean=arrays[f"v{m}.miss.mean"],
                q_miss_var=arrays[f"v{m}.miss.var"],
            )
        )
    std = None
    if header.get("has_standardizer"):
        centers: list[np.ndarray | None] = [None] * len(specs)
        scales: list[np.ndarray | None] = [None] * len(specs)
        for m in header["std_views"]:
            centers[m] = arrays[f"std{m}.center"]
            scales[m] = arrays[f"std{m}.scale"]
        std = Standardizer(centers, scales)
    state = ModelState(
        specs=specs,
        hyper=hyper,
        q_z=q_z,
        views=views,
        k_current=header["k_current"],
        elbo_trace=list(arrays["elbo_trace"]),
        iteration=header["iteration"],
        rng=None,
        standardizers=std,
    )
    state.validate()
    return state, header.get("meta", {})
