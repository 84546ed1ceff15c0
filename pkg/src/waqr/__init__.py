"""Weighted-average quantile regression.

Regress a ``psi``-weighted average of conditional quantiles of ``Y`` on
covariates ``X`` using a machine-learned conditional CDF, a debiased
transformed response and OLS with Newey-West standard errors.
"""

from .cdf import CdfConfig, ConditionalCdfModel, evaluate_cdf, fit_conditional_cdf
from .comparator import (
    QuantileGrid,
    appendix_c_oracle,
    build_quantile_grid,
    check_loss,
    parametric_waqr,
    quantile_regression,
)
from .dataset import Dataset
from .errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    DegeneracyError,
    GridError,
    NumericError,
    ParameterError,
    ShapeError,
    SingularityError,
    SizeError,
    WaqrError,
)
from .estimator import (
    FitConfig,
    FitResult,
    confidence_intervals,
    newey_west_cov,
    split_sample,
    waqr_crossfit,
    waqr_fit,
)
from .simulator import McReport, SimConfig, gen_dgp, run_mc, true_beta
from .transform import TransformGrid, build_grid, compute_rhat, compute_rhat_batch, fractional_indicator
from .weighting import WeightingSpec, eval_Psi, eval_psi, integrate_against_quantiles, psi_bar

__all__ = [
    "appendix_c_oracle",
    "build_grid",
    "build_quantile_grid",
    "CdfConfig",
    "check_loss",
    "compute_rhat",
    "compute_rhat_batch",
    "ConditionalCdfModel",
    "confidence_intervals",
    "ConfigError",
    "ConvergenceError",
    "DataError",
    "Dataset",
    "DegeneracyError",
    "eval_Psi",
    "eval_psi",
    "evaluate_cdf",
    "fit_conditional_cdf",
    "FitConfig",
    "FitResult",
    "fractional_indicator",
    "gen_dgp",
    "GridError",
    "integrate_against_quantiles",
    "McReport",
    "newey_west_cov",
    "NumericError",
    "ParameterError",
    "parametric_waqr",
    "psi_bar",
    "quantile_regression",
    "QuantileGrid",
    "run_mc",
    "ShapeError",
    "SimConfig",
    "SingularityError",
    "SizeError",
    "split_sample",
    "TransformGrid",
    "true_beta",
    "waqr_crossfit",
    "waqr_fit",
    "WaqrError",
    "WeightingSpec",
]

__version__ = "0.1.0"
