"""Multivariate marginal models for longitudinal data, fitted by GEE.

Coefficients can be shared across responses or separated per response
through response-type indicators and their interactions with covariates.
"""
__version__ = "0.1.0"

from .dataset import (ColumnRoles, LongitudinalDataset, PreprocessSpec, ingest_long,
                      preprocess_baseline)
from .design import ModelSpec, StackedProblem, build_block_problem, build_problem
from .engine import GeeFit, fit_gee
from .estimator import MarginalGEE
from .families import Family
from .simulation import SimConfig, monte_carlo

__all__ = [
    "ColumnRoles", "LongitudinalDataset", "PreprocessSpec", "ingest_long",
    "preprocess_baseline", "ModelSpec", "StackedProblem", "build_problem",
    "build_block_problem", "GeeFit", "fit_gee", "MarginalGEE", "Family",
    "SimConfig", "monte_carlo",
]
