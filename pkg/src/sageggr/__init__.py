"""Gaussian graphical regression with debiased high-dimensional inference.

Fits all node-wise regressions of a covariate-dependent Gaussian
graphical model jointly under a sparse-group penalty, then corrects the
penalized estimates coordinate by coordinate through a projected
constrained quadratic program, yielding confidence intervals, Wald
tests, and linear-contrast inference.
"""

__version__ = "0.1.0"

from .debias import (
    DebiasColumn,
    DebiasConfig,
    SageEstimate,
    debias_node,
    default_thresholds,
    sage_update,
    soft_threshold,
    solve_direct,
    solve_projected,
    theoretical_thresholds,
)
from .design import EigenFactor, NodeDesign, build_node_design, eigen_factor, gram
from .estimator import GaussianGraphicalRegression
from .harness import StudyConfig, StudySummary, export_qq, run_oracle, run_study, timing_bench
from .inference import (
    ContrastReport,
    InferenceReport,
    NoiseEstimate,
    confidence_interval,
    contrast_infer,
    estimate_noise,
    standardized_estimates,
    wald_test,
)
from .layout import CoefLayout, MultiTaskCoef, group_norm
from .model import Dataset, PrecisionModel, benchmark_model, sample, true_beta
from .sgl import (
    CVResult,
    FitConfig,
    FitResult,
    cross_validate,
    fit,
    prox_sparse_group,
    theoretical_lambdas,
)

__all__ = [
    "CoefLayout",
    "MultiTaskCoef",
    "group_norm",
    "PrecisionModel",
    "Dataset",
    "benchmark_model",
    "true_beta",
    "sample",
    "NodeDesign",
    "EigenFactor",
    "build_node_design",
    "gram",
    "eigen_factor",
    "FitConfig",
    "FitResult",
    "CVResult",
    "fit",
    "prox_sparse_group",
    "cross_validate",
    "theoretical_lambdas",
    "GaussianGraphicalRegression",
    "DebiasConfig",
    "DebiasColumn",
    "SageEstimate",
    "soft_threshold",
    "solve_projected",
    "solve_direct",
    "sage_update",
    "debias_node",
    "default_thresholds",
    "theoretical_thresholds",
    "NoiseEstimate",
    "estimate_noise",
    "confidence_interval",
    "wald_test",
    "contrast_infer",
    "standardized_estimates",
    "ContrastReport",
    "InferenceReport",
    "StudyConfig",
    "StudySummary",
    "run_study",
    "run_oracle",
    "timing_bench",
    "export_qq",
]
