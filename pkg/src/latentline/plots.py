"""Figure rendering for the report commands.

Uses the Agg backend so figures render headlessly next to their CSV/text
counterparts. Colors follow the published style: blue cells for input views,
red for output views in the factor-activity map; stacked class-probability
bars for diagnosis trajectories.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .analyze import FactorActivity, RelevanceProfile
from .longitudinal import DIAGNOSIS_LABELS

_CLASS_COLORS = ("#4c72b0", "#ffb347", "#c44e52")  # NC / MCI / AD


def plot_factor_activity(activity: FactorActivity, view_names, view_roles, path) -> None:
    """Heatmap of view-by-factor usage; blue = input view, red = output."""
    mat = activity.matrix
    m, k = mat.shape
    rgb = np.ones((m, k, 3))
    for i in range(m):
        color = (0.77, 0.31, 0.32) if view_roles[i] == "output" else (0.30, 0.45, 0.69)
        rgb[i, mat[i]] = color
    fig, ax = plt.subplots(figsize=(max(4.0, 0.35 * k + 2.0), max(3.0, 0.3 * m + 1.5)))
    ax.imshow(rgb, aspect="auto", interpolation="nearest")
    ax.set_xticks(range(k))
    ax.set_xticklabels([str(i + 1) for i in range(k)], fontsize=7)
    ax.set_yticks(range(m))
    ax.set_yticklabels(view_names, fontsize=7)
    ax.set_xlabel("latent factor")
    ax.set_title(f"factor activity (threshold {activity.threshold:g})")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_relevance(profile: RelevanceProfile, feature_names, path, title="feature relevance") -> None:
    scores = profile.scores
    fig, ax = plt.subplots(figsize=(max(4.0, 0.4 * len(scores) + 1.5), 3.2))
    ax.bar(range(len(scores)), scores, color="#4c72b0")
    ax.set_xticks(range(len(scores)))
    ax.set_xticklabels(feature_names, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel(f"relevance ({profile.normalization})")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_trajectory(points, variable: str, subject: str, path,
                    is_diagnosis: bool = False) -> None:
    """Observed/imputed trajectory; diagnosis renders stacked class bars with
    the observed label above each fully known month."""
    fig, ax = plt.subplots(figsize=(6.4, 3.4))
    months = [p.month for p in points]
    if is_diagnosis:
        width = 0.8 * (min(np.diff(months)) if len(months) > 1 else 6)
        for p in points:
            base = 0.0
            scores = p.class_scores if p.class_scores is not None else np.zeros(3)
            for c, s in enumerate(scores):
                ax.bar(p.month, s, width=width, bottom=base, color=_CLASS_COLORS[c],
                       edgecolor="white", linewidth=0.5)
                base += s
            if p.source == "observed":
                ax.text(p.month, 1.02, DIAGNOSIS_LABELS[int(p.value)], ha="center", fontsize=7)
        ax.set_ylim(0, 1.12)
        ax.set_ylabel("class probability")
        handles = [plt.Rectangle((0, 0), 1, 1, color=c) for c in _CLASS_COLORS]
        ax.legend(handles, DIAGNOSIS_LABELS, loc="upper left", fontsize=7, ncol=3)
    else:
        obs = [(p.month, p.value) for p in points if p.source == "observed"]
        imp = [(p.month, p.value, p.std or 0.0) for p in points if p.source == "imputed"]
        ax.plot(months, [p.value for p in points], "-", color="#888888", lw=0.8)
        if obs:
            ax.plot([m for m, _ in obs], [v for _, v in obs], "o", color="#4c72b0", label="observed")
        if imp:
            ax.errorbar([m for m, _, _ in imp], [v for _, v, _ in imp],
                        yerr=[2 * s for _, _, s in imp], fmt="s", color="#c44e52",
                        capsize=3, label="imputed (+-2 sd)")
        ax.set_ylabel(variable)
        ax.legend(fontsize=7)
    ax.set_xlabel("month")
    ax.set_title(f"{variable} for subject {subject}")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
