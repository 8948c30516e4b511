"""Debiased ATT estimation with VAR(1) counterfactual covariates."""

from ._core import (
    CoefficientPaths,
    ConfigError,
    DataError,
    NumericalError,
    Panel,
    VarModel,
    error_covariance,
    estimate,
    estimators,
    fit_var,
    load_panel,
    mise,
    presets,
    run_benchmark,
    scenario,
    simulate,
    wilcoxon_signed_rank,
)

__all__ = [
    "CoefficientPaths",
    "ConfigError",
    "DataError",
    "NumericalError",
    "Panel",
    "VarModel",
    "error_covariance",
    "estimate",
    "estimators",
    "fit_var",
    "load_panel",
    "mise",
    "presets",
    "run_benchmark",
    "scenario",
    "simulate",
    "wilcoxon_signed_rank",
]
