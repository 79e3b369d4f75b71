"""Influence-function toolkit: symbolic derivation, numerical checks, one-step estimation and simulation."""
from .catalog import eval_uncentered_if, get_entry, remainder, truth, variance_of_if
from .data import Dataset, read_csv
from .dist import DiscreteDist, Schema, gateaux_derivative, make_discrete
from .dsl import check_if, derive_if, evaluate_functional, parse_functional, render
from .estimate import (
    Estimate,
    crossfit_estimate,
    decompose_error,
    make_fold_plan,
    onestep_estimate,
    plugin_estimate,
    ratio_estimate,
)
from .nuisance import fit_density, fit_kernel_regression, fit_knn, parse_learner, select_tuning_cv

__version__ = "0.1.0"

__all__ = [
    "Dataset", "DiscreteDist", "Estimate", "Schema", "check_if", "crossfit_estimate", "decompose_error",
    "derive_if", "eval_uncentered_if", "evaluate_functional", "fit_density", "fit_kernel_regression", "fit_knn",
    "gateaux_derivative", "get_entry", "make_discrete", "make_fold_plan", "onestep_estimate", "parse_functional",
    "parse_learner", "plugin_estimate", "ratio_estimate", "read_csv", "remainder", "render",
    "select_tuning_cv", "truth", "variance_of_if",
]
