"""Bias-aware average treatment effect estimation under bounded heterogeneity.

The pipeline: validate data, build fixed-design matrices for a target
estimand, trace the bias-variance frontier with a penalized propensity
regression, and report fixed-length confidence intervals whose critical
value absorbs the worst-case bias allowed by the heterogeneity bound.
Remains usable when overlap is limited or absent, where the usual
interaction-full regression breaks down.
"""

from .baselines import (
    BaselineFit,
    bias_corrected_ci,
    comparison_table,
    long_fit,
    short_fit,
    trimmed_fit,
)
from .bias import (
    FeasibilityCheck,
    HeterogeneityBound,
    check_unbiased_feasible,
    maxbias_general,
    maxbias_ridge,
    maxbias_trimmed,
)
from .dataset import (
    ColumnSchema,
    Dataset,
    PanelDataset,
    load_csv,
    load_panel_csv,
    panel_to_design,
    saturate,
)
from .design import DesignMatrices, build_design, propensity_fit
from .errors import ConfigError, DataError, NumericalError, RegulateError
from .inference import (
    EstimateReport,
    GridSpec,
    cv_folded_normal,
    feasible_ci,
    initial_estimator,
    optimize_lambda,
    variance_robust,
)
from .ridge import (
    RidgeFit,
    fit_at,
    fit_limit_zero,
    lambda_path,
    penalized_propensity,
    ridge_weights_discrete,
)
from .simlab import DgpSpec, McResult, make_worstcase_delta, simulate
from .vcate import (
    SensitivityCurve,
    sensitivity,
    suggest_bound,
    vcate_corrected,
    vcate_plugin,
    vcate_report,
)

__version__ = "0.1.0"

__all__ = [
    "BaselineFit",
    "ColumnSchema",
    "ConfigError",
    "DataError",
    "Dataset",
    "DesignMatrices",
    "DgpSpec",
    "EstimateReport",
    "FeasibilityCheck",
    "GridSpec",
    "HeterogeneityBound",
    "McResult",
    "NumericalError",
    "PanelDataset",
    "RegulateError",
    "RidgeFit",
    "SensitivityCurve",
    "bias_corrected_ci",
    "build_design",
    "check_unbiased_feasible",
    "comparison_table",
    "cv_folded_normal",
    "feasible_ci",
    "fit_at",
    "fit_limit_zero",
    "initial_estimator",
    "lambda_path",
    "load_csv",
    "load_panel_csv",
    "long_fit",
    "make_worstcase_delta",
    "maxbias_general",
    "maxbias_ridge",
    "maxbias_trimmed",
    "optimize_lambda",
    "panel_to_design",
    "penalized_propensity",
    "propensity_fit",
    "ridge_weights_discrete",
    "saturate",
    "sensitivity",
    "short_fit",
    "simulate",
    "suggest_bound",
    "trimmed_fit",
    "variance_robust",
    "vcate_corrected",
    "vcate_plugin",
    "vcate_report",
]
