"""Heterogeneity-variance estimation and sensitivity analysis over the bound.

The plug-in estimator of the heterogeneity variance is biased upward by the
sampling noise of the interaction coefficients; the corrected estimator
removes the trace of that noise using leave-one-out residual products. The
sensitivity routine sweeps the bound from zero upward and reports the
smallest bound at which the interval stops excluding zero.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from . import bias as bias_mod
from .baselines import bias_corrected_ci, short_fit
from .design import DesignMatrices, subsample_design
from .errors import ConfigError, NumericalError
from .inference import (
    EstimateReport,
    GridSpec,
    feasible_ci,
    initial_estimator,
    lindeberg_weight,
    variance_robust,
)
from .linalg import quad_form


def _long_internals(dm: DesignMatrices, y: np.ndarray):
    w = np.column_stack([dm.d[:, None], dm.x, dm.dxt])
    if np.linalg.matrix_rank(w) < w.shape[1]:
        raise NumericalError(
            "long regression infeasible (no overlap); "
            "estimate the heterogeneity variance on the overlap subsample"
        )
    wtw_inv = np.linalg.inv(w.T @ w)
    theta = wtw_inv @ (w.T @ y)
    resid = y - w @ theta
    leverage = np.einsum("ij,jk,ik->i", w, wtw_inv, w)
    return w, theta, resid, leverage, wtw_inv


def vcate_plugin(dm: DesignMatrices, y: np.ndarray | None = None) -> float:
    """Plug-in heterogeneity variance ``delta_hat' Vx delta_hat``.

    Biased upward: sampling noise in the interaction coefficients inflates
    the quadratic form.
    """
    y = dm.y if y is None else np.asarray(y, dtype=np.float64)
    _, theta, _, _, _ = _long_internals(dm, y)
    delta = theta[-dm.k :] if dm.k else np.empty(0)
    return quad_form(delta, dm.vx) if dm.k else 0.0


@dataclass(frozen=True)
class VcateCorrected:
    """Bias-corrected heterogeneity variance with convenience fields."""

    value: float
    clamped: float
    plugin: float
    trace_correction: float
    delta: np.ndarray = field(repr=False, default=None)
    cov_delta: np.ndarray = field(repr=False, default=None)


def vcate_corrected(dm: DesignMatrices, y: np.ndarray | None = None) -> VcateCorrected:
    """Plug-in estimate minus the trace of the interaction-coefficient noise.

    The noise covariance uses leave-one-out residual products
    ``resid_i^2 / (1 - h_ii)`` in the sandwich, so the correction is exactly
    unbiased under homoskedastic errors. The corrected value can be
    negative; the truthful value and a zero-floored copy are both returned.
    """
    y = dm.y if y is None else np.asarray(y, dtype=np.float64)
    w, theta, resid, leverage, wtw_inv = _long_internals(dm, y)
    high = leverage >= 1.0 - 1e-10
    if high.any():
        row = int(np.argmax(high))
        raise NumericalError(
            f"self-leveraged observation (leverage 1) at row {row + 1}; "
            "drop singleton cells before estimating the heterogeneity variance"
        )
    if dm.k == 0:
        return VcateCorrected(0.0, 0.0, 0.0, 0.0, np.empty(0), np.empty((0, 0)))
    sigma_i2 = resid**2 / (1.0 - leverage)
    meat = (w * sigma_i2[:, None]).T @ w
    cov_theta = wtw_inv @ meat @ wtw_inv
    delta = theta[-dm.k :]
    cov_delta = cov_theta[-dm.k :, -dm.k :]
    plugin = quad_form(delta, dm.vx)
    trace_term = float(np.trace(dm.vx @ cov_delta))
    value = plugin - trace_term
    return VcateCorrected(
        value=value,
        clamped=max(value, 0.0),
        plugin=plugin,
        trace_correction=trace_term,
        delta=delta,
        cov_delta=cov_delta,
    )


@dataclass(frozen=True)
class SuggestedBound:
    """Heuristic bound: twice the upper confidence limit of the estimated variance."""

    c: float
    c_squared: float
    vcate_hat: float
    se: float


def suggest_bound(
    dm: DesignMatrices, y: np.ndarray | None = None, alpha: float = 0.05
) -> SuggestedBound:
    """Set C^2 to twice a normal-approximation upper bound on the variance.

    The standard error treats the interaction coefficients as Gaussian with
    their estimated covariance. Heuristic, intended as a starting point for
    sensitivity analysis rather than a calibrated rule.
    """
    est = vcate_corrected(dm, dm.y if y is None else y)
    vs = dm.vx @ est.cov_delta
    var_q = 4.0 * float(est.delta @ vs @ dm.vx @ est.delta) + 2.0 * float(
        np.trace(vs @ vs)
    )
    se = math.sqrt(max(var_q, 0.0))
    upper = est.value + norm.ppf(1.0 - alpha) * se
    c2 = 2.0 * max(upper, 0.0)
    return SuggestedBound(c=math.sqrt(c2), c_squared=c2, vcate_hat=est.value, se=se)


def overlap_subsample(dm: DesignMatrices) -> DesignMatrices:
    """Design restricted to cells with both treated and untreated units."""
    if not (dm.cells_exhaustive and dm.cell_id is not None):
        raise NumericalError("overlap subsample requires a saturated cell design")
    mask = np.zeros(dm.n, dtype=bool)
    for c in np.unique(dm.cell_id):
        in_cell = dm.cell_id == c
        dc = dm.d[in_cell]
        if dc.min() < dc.max():
            mask |= in_cell
    if not mask.any():
        raise NumericalError("no overlap anywhere; limit undefined")
    return subsample_design(dm, mask)


def vcate_report(dm: DesignMatrices, y: np.ndarray | None = None, alpha: float = 0.05) -> dict:
    """Both variance estimates plus the suggested bound, as a flat record.

    Falls back to the overlap subsample with a warning when the
    interaction-full regression is infeasible on the full design.
    """
    y = dm.y if y is None else np.asarray(y, dtype=np.float64)
    target, y_used, subsampled = dm, y, False
    try:
        _long_internals(dm, y)
    except NumericalError:
        target = overlap_subsample(dm)
        y_used = None
        subsampled = True
        warnings.warn(
            "overlap fails; heterogeneity variance estimated on the overlap subsample"
        )
    est = vcate_corrected(target, y_used)
    suggestion = suggest_bound(target, y_used, alpha)
    return {
        "vcate_plugin": est.plugin,
        "vcate_corrected": est.value,
        "vcate_corrected_floor": est.clamped,
        "suggested_c": suggestion.c,
        "suggested_c_squared": suggestion.c_squared,
        "se": suggestion.se,
        "n_used": target.n,
        "overlap_subsample": subsampled,
    }


@dataclass(frozen=True)
class SensitivityCurve:
    """Per-bound estimates for the frontier estimator and the corrected short CI."""

    grid: tuple[float, ...]
    regulate: tuple[EstimateReport | None, ...]
    short_bc: tuple[EstimateReport | None, ...]
    errors: dict
    breakdown_c: float | None

    def to_rows(self) -> list[dict]:
        rows = []
        for i, c in enumerate(self.grid):
            for name, reports in (("regulate", self.regulate), ("short_bc", self.short_bc)):
                rep = reports[i]
                if rep is None:
                    continue
                lo, hi = rep.ci
                rows.append(
                    {
                        "c": c,
                        "estimator": name,
                        "beta_hat": rep.beta_hat,
                        "ci_lo": lo,
                        "ci_hi": hi,
                        "half_length": rep.half_length,
                        "maxbias": rep.maxbias,
                        "sd": rep.sd,
                    }
                )
        return rows


SENSITIVITY_COLUMNS = ("c", "estimator", "beta_hat", "ci_lo", "ci_hi", "half_length", "maxbias", "sd")


def sensitivity(
    dm: DesignMatrices,
    y: np.ndarray | None = None,
    c_grid=(0.0,),
    alpha: float = 0.05,
    se_kind: str = "robust",
    mode: str = "auto",
    grid: GridSpec | None = None,
) -> SensitivityCurve:
    """Sweep the heterogeneity bound upward and locate the breakdown point.

    The grid must be ascending and start at zero (the constant-effects
    benchmark). Each bound gets the full pipeline plus the bias-corrected
    short-regression interval; a bound where estimation fails is recorded
    with its error instead of aborting the sweep. The breakdown point is the
    smallest bound whose interval contains zero.
    """
    y = dm.y if y is None else np.asarray(y, dtype=np.float64)
    c_grid = tuple(float(c) for c in c_grid)
    if not c_grid or c_grid[0] != 0.0 or any(
        b <= a for a, b in zip(c_grid, c_grid[1:])
    ):
        raise ConfigError("c grid must be ascending and start at 0")

    init = initial_estimator(dm, y, mode=mode)
    s_fit = short_fit(dm, y)
    v_short = variance_robust(
        s_fit.weights, init.residuals, cluster_id=dm.cluster_id, kind=se_kind,
        sigma2=init.sigma2,
    )
    sd_short = math.sqrt(v_short)

    regulate: list[EstimateReport | None] = []
    short_bc: list[EstimateReport | None] = []
    errors: dict = {}
    breakdown = None
    for c in c_grid:
        try:
            rep = feasible_ci(
                dm, y, c_bound=c, alpha=alpha, se_kind=se_kind, mode=mode,
                grid=grid, init=init,
            )
            regulate.append(rep)
            lo, hi = rep.ci
            if breakdown is None and lo <= 0.0 <= hi:
                breakdown = c
        except (NumericalError, ConfigError) as exc:
            regulate.append(None)
            errors.setdefault(c, []).append(f"regulate: {exc}")
        try:
            lo, hi = bias_corrected_ci(s_fit, c, alpha, v_short)
            mb = bias_mod.maxbias_general(s_fit.weights, dm, c)
            short_bc.append(
                EstimateReport(
                    estimator="short_bc",
                    estimand=dm.estimand,
                    n=dm.n,
                    c=c,
                    alpha=alpha,
                    se_kind=se_kind,
                    beta_hat=s_fit.beta_hat,
                    sd=sd_short,
                    maxbias=mb,
                    half_length=(hi - lo) / 2.0,
                    lambda_star=math.inf,
                    sigma_hat=math.sqrt(init.sigma2),
                    lindeberg=lindeberg_weight(s_fit.weights),
                )
            )
        except (NumericalError, ConfigError) as exc:
            short_bc.append(None)
            errors.setdefault(c, []).append(f"short_bc: {exc}")

    return SensitivityCurve(
        grid=c_grid,
        regulate=tuple(regulate),
        short_bc=tuple(short_bc),
        errors=errors,
        breakdown_c=breakdown,
    )
