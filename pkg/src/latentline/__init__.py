"""Sparse multi-view Bayesian factor analysis for longitudinal forecasting."""

from .analyze import (
    FactorActivity,
    RelevanceProfile,
    classify_onehot,
    factor_activity,
    feature_relevance,
    predict_view,
    subject_trajectory,
)
from .baselines import impute, logistic_fit_cv, ridge_fit_cv
from .bench import BenchmarkSpec, run_benchmark
from .core import (
    DataError,
    Dataset,
    GammaPosterior,
    GaussianPosterior,
    Hyperparameters,
    LearningRate,
    ModelState,
    NumericalError,
    ViewData,
    ViewSpec,
    gamma_expectations,
    validate_dataset,
)
from .engine import FitOptions, FitReport, compute_elbo, fit, init_state, prune_factors
from .longitudinal import (
    Standardizer,
    SubjectTable,
    VariableCatalog,
    WindowLayout,
    assemble,
    build_windows,
    encode_diagnosis,
    fit_standardizer,
    load_csv,
)
from .metrics import auc_one_vs_rest, balanced_accuracy, mae, mauc
from .persist import load_model, save_model
from .synth import CohortConfig, SynthConfig, generate, subspace_alignment, synthetic_cohort

__all__ = [
    "BenchmarkSpec",
    "CohortConfig",
    "DataError",
    "Dataset",
    "FactorActivity",
    "FitOptions",
    "FitReport",
    "GammaPosterior",
    "GaussianPosterior",
    "Hyperparameters",
    "LearningRate",
    "ModelState",
    "NumericalError",
    "RelevanceProfile",
    "Standardizer",
    "SubjectTable",
    "SynthConfig",
    "VariableCatalog",
    "ViewData",
    "ViewSpec",
    "WindowLayout",
    "assemble",
    "auc_one_vs_rest",
    "balanced_accuracy",
    "build_windows",
    "classify_onehot",
    "compute_elbo",
    "encode_diagnosis",
    "factor_activity",
    "feature_relevance",
    "fit",
    "fit_standardizer",
    "gamma_expectations",
    "generate",
    "impute",
    "init_state",
    "load_csv",
    "load_model",
    "logistic_fit_cv",
    "mae",
    "mauc",
    "predict_view",
    "prune_factors",
    "ridge_fit_cv",
    "run_benchmark",
    "save_model",
    "subject_trajectory",
    "subspace_alignment",
    "synthetic_cohort",
    "validate_dataset",
]

__version__ = "0.1.0"
