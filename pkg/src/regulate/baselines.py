"""Reference estimators: interaction-free, interaction-full, trimmed, and
their bias-corrected confidence intervals.

These are the comparison points for the frontier estimator: the
interaction-free ("short") regression is the infinite-penalty endpoint, the
interaction-full ("long") regression is the zero-penalty endpoint under
full overlap, and trimming drops limited-overlap observations at the cost
of changing the estimand.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import bias as bias_mod
from .design import DesignMatrices, propensity_fit, subsample_design
from .errors import NumericalError
from .inference import cv_folded_normal, feasible_ci, initial_estimator, variance_robust

DEFAULT_TRIM_C = 0.09  # the (0.1, 0.9) propensity rule on p(1-p)


@dataclass(frozen=True)
class BaselineFit:
    """Weights and point estimate for one reference estimator."""

    kind: str
    weights: np.ndarray
    beta_hat: float
    maxbias: float
    ci: tuple[float, float] | None = None
    dm: DesignMatrices = field(repr=False, default=None)


def short_weights(dm: DesignMatrices) -> np.ndarray:
    """Weights of the regression of the outcome on treatment and confounders."""
    coef, _, _, _ = np.linalg.lstsq(dm.x, dm.d, rcond=None)
    resid = dm.d - dm.x @ coef
    dd = float(resid @ dm.d)
    if dd <= 1e-10:
        raise NumericalError("no residual treatment variation")
    return resid / dd


def short_fit(dm: DesignMatrices, y: np.ndarray | None = None, c_bound: float = 0.0) -> BaselineFit:
    y = dm.y if y is None else np.asarray(y, dtype=np.float64)
    a = short_weights(dm)
    return BaselineFit(
        kind="short",
        weights=a,
        beta_hat=float(a @ y),
        maxbias=bias_mod.maxbias_general(a, dm, c_bound),
        dm=dm,
    )


def long_weights(dm: DesignMatrices) -> np.ndarray:
    """Weights of the interaction-full regression; needs full overlap."""
    w = np.column_stack([dm.d[:, None], dm.x, dm.dxt])
    if np.linalg.matrix_rank(w) < w.shape[1]:
        raise NumericalError("long regression infeasible (no overlap)")
    block = np.column_stack([dm.x, dm.dxt])
    coef, _, _, _ = np.linalg.lstsq(block, dm.d, rcond=None)
    resid = dm.d - block @ coef
    dd = float(resid @ dm.d)
    if dd <= 1e-10:
        raise NumericalError("long regression infeasible (no overlap)")
    return resid / dd


def long_fit(dm: DesignMatrices, y: np.ndarray | None = None, c_bound: float = 0.0) -> BaselineFit:
    y = dm.y if y is None else np.asarray(y, dtype=np.float64)
    a = long_weights(dm)
    return BaselineFit(
        kind="long",
        weights=a,
        beta_hat=float(a @ y),
        maxbias=bias_mod.maxbias_general(a, dm, c_bound),
        dm=dm,
    )


def trimmed_weights(dm: DesignMatrices, trim_c: float = DEFAULT_TRIM_C) -> tuple[np.ndarray, np.ndarray]:
    """Within-subsample regression weights after propensity trimming.

    Keeps rows with ``p (1 - p) > trim_c``, refits the interaction-full
    regression there, and sets the weight of every trimmed row to zero.
    Returns the weights and the keep mask.
    """
    p = propensity_fit(dm)
    keep = p * (1.0 - p) > trim_c
    if not keep.any():
        raise NumericalError("trimming removed every observation")
    d_kept = dm.d[keep]
    if d_kept.min() == d_kept.max():
        raise NumericalError("trimmed sample lost all treated or all untreated units")
    sub = subsample_design(dm, keep)
    a_sub = long_weights(sub)
    a = np.zeros(dm.n)
    a[keep] = a_sub
    return a, keep


def trimmed_fit(
    dm: DesignMatrices,
    y: np.ndarray | None = None,
    trim_c: float = DEFAULT_TRIM_C,
    c_bound: float = 0.0,
) -> BaselineFit:
    y = dm.y if y is None else np.asarray(y, dtype=np.float64)
    a, _ = trimmed_weights(dm, trim_c)
    return BaselineFit(
        kind="trimmed",
        weights=a,
        beta_hat=float(a @ y),
        maxbias=bias_mod.maxbias_general(a, dm, c_bound),
        dm=dm,
    )


def bias_corrected_ci(
    fit: BaselineFit, c_bound: float, alpha: float, v_hat: float
) -> tuple[float, float]:
    """Bias-aware interval around a reference estimator.

    Inflates the critical value by the estimator's worst-case bias under the
    bound, so coverage holds whenever the bound does.
    """
    if v_hat <= 0:
        raise NumericalError("estimated variance is not positive")
    sd = math.sqrt(v_hat)
    mb = bias_mod.maxbias_general(fit.weights, fit.dm, c_bound)
    half = sd * cv_folded_normal(mb / sd, alpha)
    return (fit.beta_hat - half, fit.beta_hat + half)


COMPARISON_COLUMNS = (
    "estimator",
    "beta_hat",
    "sd",
    "maxbias",
    "ci_lo",
    "ci_hi",
    "ci_length_ratio",
)


def comparison_table(
    dm: DesignMatrices,
    y: np.ndarray | None = None,
    c_bound: float = 0.0,
    alpha: float = 0.05,
    se_kind: str = "robust",
    trim_c: float = DEFAULT_TRIM_C,
    mode: str = "auto",
) -> list[dict]:
    """Side-by-side table of all estimators at one heterogeneity bound.

    Every estimator uses the same initial-fit residuals for its variance.
    CI lengths are normalized to the frontier estimator's length. Reference
    estimators that are infeasible on the design (e.g. the interaction-full
    regression without overlap) are skipped with a warning.
    """
    y = dm.y if y is None else np.asarray(y, dtype=np.float64)
    init = initial_estimator(dm, y, mode=mode)
    report = feasible_ci(
        dm, y, c_bound=c_bound, alpha=alpha, se_kind=se_kind, mode=mode, init=init
    )
    ref_length = 2.0 * report.half_length

    def variance(a: np.ndarray) -> float:
        return variance_robust(
            a, init.residuals, cluster_id=dm.cluster_id, kind=se_kind, sigma2=init.sigma2
        )

    lo, hi = report.ci
    rows = [
        {
            "estimator": "regulate",
            "beta_hat": report.beta_hat,
            "sd": report.sd,
            "maxbias": report.maxbias,
            "ci_lo": lo,
            "ci_hi": hi,
            "ci_length_ratio": 1.0,
        }
    ]

    def add(kind: str, fit: BaselineFit, corrected: bool) -> None:
        v = variance(fit.weights)
        sd = math.sqrt(v)
        if corrected:
            lo, hi = bias_corrected_ci(fit, c_bound, alpha, v)
        else:
            z = cv_folded_normal(0.0, alpha)
            lo, hi = fit.beta_hat - z * sd, fit.beta_hat + z * sd
        rows.append(
            {
                "estimator": kind,
                "beta_hat": fit.beta_hat,
                "sd": sd,
                "maxbias": fit.maxbias,
                "ci_lo": lo,
                "ci_hi": hi,
                "ci_length_ratio": (hi - lo) / ref_length if ref_length > 0 else math.nan,
            }
        )

    s_fit = short_fit(dm, y, c_bound)
    add("short", s_fit, corrected=False)
    add("short_bc", s_fit, corrected=True)
    try:
        add("long", long_fit(dm, y, c_bound), corrected=False)
    except NumericalError as exc:
        warnings.warn(f"long regression skipped: {exc}")
    try:
        t_fit = trimmed_fit(dm, y, trim_c, c_bound)
        add("trimmed", t_fit, corrected=False)
        add("trimmed_bc", t_fit, corrected=True)
    except NumericalError as exc:
        warnings.warn(f"trimmed regression skipped: {exc}")
    return rows
