"""Independent oracles.

Everything here recomputes a target quantity by a different route than the
library: dense normal equations, Monte Carlo suprema, textbook weighted
estimators, brute OLS with dummies. Expected values in the test files come
from these, not from the code under test.
"""

from __future__ import annotations

import numpy as np
import scipy.stats


def mc_sup_bias(a, dm, c_bound: float, n_draws: int = 100_000, seed: int = 0) -> float:
    """Supremum of the bias form over the bound ellipsoid by sampling.

    Samples directions uniformly on the sphere, maps them to the ellipsoid
    boundary through the Cholesky factor, and takes the max absolute value
    (each draw covers both signs).
    """
    q = dm.dxt.T @ np.asarray(a, dtype=np.float64)
    if dm.k == 0 or c_bound == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    chol = np.linalg.cholesky(dm.vx)
    g = rng.standard_normal((n_draws, dm.k))
    u = g / np.linalg.norm(g, axis=1, keepdims=True)
    delta = c_bound * np.linalg.solve(chol.T, u.T).T
    return float(np.max(np.abs(delta @ q)))


def gen_ridge_theta(dm, y, lam: float) -> np.ndarray:
    """Direct normal-equation solve of the penalized least squares problem."""
    w = np.column_stack([dm.d[:, None], dm.x, dm.dxt])
    pen = np.zeros((w.shape[1], w.shape[1]))
    if dm.k:
        pen[-dm.k:, -dm.k:] = dm.vx
    return np.linalg.solve(w.T @ w + lam * pen, w.T @ y)


def gen_ridge_beta(dm, y, lam: float) -> float:
    return float(gen_ridge_theta(dm, y, lam)[0])


def normal_eq_weights(dm, lam: float) -> np.ndarray:
    """Weights as the design times the first column of the penalized inverse."""
    w = np.column_stack([dm.d[:, None], dm.x, dm.dxt])
    pen = np.zeros((w.shape[1], w.shape[1]))
    if dm.k:
        pen[-dm.k:, -dm.k:] = dm.vx
    e1 = np.zeros(w.shape[1])
    e1[0] = 1.0
    return w @ np.linalg.solve(w.T @ w + lam * pen, e1)


def propensity_cell_fractions(dm) -> np.ndarray:
    """Within-cell treated fractions spread back to rows."""
    p = np.empty(dm.n)
    for c in np.unique(dm.cell_id):
        mask = dm.cell_id == c
        p[mask] = dm.d[mask].mean()
    return p


def ipw_beta(dm, y, estimand: str) -> float:
    """Textbook inverse propensity weighted estimators (saturated designs)."""
    p = propensity_cell_fractions(dm)
    d = dm.d
    if estimand == "ate":
        return float(np.mean((d - p) * y / (p * (1.0 - p))))
    if estimand == "att":
        return float(np.mean((d - p) * y / ((1.0 - p) * d.mean())))
    return float(np.mean((d - p) * y / (p * (1.0 - d.mean()))))


def ols_beta(columns: list[np.ndarray], y: np.ndarray) -> float:
    """First coefficient of a dense least squares fit."""
    block = np.column_stack(columns)
    coef, _, _, _ = np.linalg.lstsq(block, y, rcond=None)
    return float(coef[0])


def short_beta_direct(dm, y) -> float:
    return ols_beta([dm.d[:, None], dm.x], y)


def long_beta_direct(dm, y) -> float:
    return ols_beta([dm.d[:, None], dm.x, dm.dxt], y)


def foldnorm_cv(bias_ratio: float, alpha: float) -> float:
    """Folded-normal quantile straight from scipy."""
    return float(scipy.stats.foldnorm.ppf(1.0 - alpha, c=bias_ratio))


def static_twfe_beta(unit, time, y, d) -> float:
    """Two-way fixed effects coefficient by dense dummy regression."""
    unit = np.asarray(unit)
    time = np.asarray(time)
    cols = [np.asarray(d, dtype=np.float64)[:, None], np.ones((len(y), 1))]
    for u in np.unique(unit)[1:]:
        cols.append((unit == u).astype(np.float64)[:, None])
    for t in np.unique(time)[1:]:
        cols.append((time == t).astype(np.float64)[:, None])
    return ols_beta(cols, np.asarray(y, dtype=np.float64))


def cohort_time_twfe_beta(cohort, time, y, d) -> float:
    """Cohort plus period fixed effects regression coefficient on treatment."""
    cohort = np.asarray(cohort)
    time = np.asarray(time)
    cols = [np.asarray(d, dtype=np.float64)[:, None], np.ones((len(y), 1))]
    for g in np.unique(cohort)[1:]:
        cols.append((cohort == g).astype(np.float64)[:, None])
    for t in np.unique(time)[1:]:
        cols.append((time == t).astype(np.float64)[:, None])
    return ols_beta(cols, np.asarray(y, dtype=np.float64))
