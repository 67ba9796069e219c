"""Critical values, penalty selection, variance estimation, and the feasible CI.

The confidence interval is ``beta_hat +/- cv_alpha(maxbias / sd) * sd``
where the critical value is a folded-normal quantile, so coverage holds for
every parameter consistent with the heterogeneity bound even when the
target is only set identified. The penalty is chosen to minimize the
half-length over the bias-variance frontier.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .bias import maxbias_fit
from .design import DesignMatrices, overlap_summary
from .errors import ConfigError, DataError, NumericalError
from .linalg import pinv_sym, sym_solve
from .ridge import RidgeFit, default_lambda_grid, fit_at

LINDEBERG_WARN = 0.05  # heuristic default, documented in the README


def _phi(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def cv_folded_normal(bias_ratio: float, alpha: float) -> float:
    """1 - alpha quantile of |N(bias_ratio, 1)| by bisection.

    Strictly increasing in the bias ratio; equals the usual two-sided
    normal quantile at zero and approaches ``bias_ratio + z_{1-alpha}``
    for large ratios. Beyond ratio 10 the lower tail is below machine
    precision, so the one-sided quantile is returned directly.
    """
    if not (0.0 < alpha < 1.0):
        raise ConfigError("alpha must be in (0, 1)")
    if bias_ratio < 0:
        raise ConfigError("bias ratio must be nonnegative")
    if math.isinf(bias_ratio):
        return math.inf
    if bias_ratio >= 10.0:
        return bias_ratio + float(norm.ppf(1.0 - alpha))
    lo = float(norm.ppf(1.0 - alpha / 2.0))
    hi = bias_ratio + lo

    def coverage(c: float) -> float:
        return _phi(c - bias_ratio) - _phi(-c - bias_ratio)

    target = 1.0 - alpha
    if coverage(lo) >= target:
        return lo
    while hi - lo > 1e-10:
        mid = 0.5 * (lo + hi)
        if coverage(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def half_length(maxbias: float, sd: float, alpha: float) -> float:
    """CI half-length for a given worst-case bias and standard deviation."""
    if sd <= 0:
        raise NumericalError("standard deviation must be positive")
    if math.isinf(maxbias):
        return math.inf
    return sd * cv_folded_normal(maxbias / sd, alpha)


def lindeberg_weight(a: np.ndarray) -> float:
    """Maximal squared-weight share; large values flag a shaky normal approximation."""
    a2 = np.asarray(a, dtype=np.float64) ** 2
    total = a2.sum()
    if total <= 0:
        return 1.0
    return float(a2.max() / total)


@dataclass(frozen=True)
class GridSpec:
    """Penalty-search controls: coarse log grid plus golden-section refinement."""

    n_points: int = 40
    lo: float = 1e-8
    hi: float = 1e12
    include_short: bool = True
    golden_tol: float = 1e-10


def optimize_lambda(
    dm: DesignMatrices,
    c_bound: float,
    sigma: float,
    alpha: float = 0.05,
    grid: GridSpec | None = None,
) -> tuple[float, RidgeFit]:
    """Penalty minimizing the CI half-length under error scale ``sigma``.

    Evaluates the coarse grid (and the infinite-penalty endpoint), then
    refines the best bracket by golden-section search on the log penalty.
    The returned value is the minimum over every point evaluated, so it is
    never worse than the grid even if the objective is not unimodal.
    """
    if sigma <= 0:
        raise NumericalError("sigma must be positive")
    if c_bound < 0:
        raise ConfigError("heterogeneity bound C must be nonnegative")
    grid = grid or GridSpec()
    if c_bound == 0:
        return math.inf, fit_at(dm, math.inf, diagnostics=False)

    cache: dict[float, tuple[float, RidgeFit | None]] = {}

    def objective(lam: float) -> float:
        if lam in cache:
            return cache[lam][0]
        try:
            fit = fit_at(dm, lam, diagnostics=False)
            sd = sigma * fit.norm
            val = half_length(maxbias_fit(fit, dm, c_bound), sd, alpha)
        except NumericalError:
            cache[lam] = (math.inf, None)
            return math.inf
        cache[lam] = (val, fit)
        return val

    lambdas = default_lambda_grid(dm, grid.n_points, grid.lo, grid.hi)
    values = np.array([objective(lam) for lam in lambdas])
    if grid.include_short:
        objective(math.inf)
    if not np.any(np.isfinite(values)) and not math.isfinite(cache.get(math.inf, (math.inf,))[0]):
        raise NumericalError(
            "lambda search failed: objective not finite at any penalty "
            f"(n={dm.n}, k={dm.k}, C={c_bound}, sigma={sigma})"
        )

    if np.any(np.isfinite(values)):
        i = int(np.nanargmin(np.where(np.isfinite(values), values, np.nan)))
        lo = math.log(lambdas[max(i - 1, 0)])
        hi = math.log(lambdas[min(i + 1, len(lambdas) - 1)])
        _golden_section(lambda t: objective(math.exp(t)), lo, hi, grid.golden_tol)

    best_lam = min(
        (lam for lam, (val, f) in cache.items() if f is not None),
        key=lambda lam: (cache[lam][0], lam),
    )
    return best_lam, cache[best_lam][1]


def _golden_section(f, lo: float, hi: float, tol: float, max_iter: int = 200) -> None:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)


@dataclass(frozen=True)
class InitialFit:
    """Initial coefficient estimate, residuals, and error variance."""

    theta: np.ndarray
    residuals: np.ndarray
    sigma2: float
    mode: str

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)


def _gen_ridge_theta(w: np.ndarray, y: np.ndarray, lam: float, penalty: np.ndarray) -> np.ndarray:
    m = w.T @ w + lam * penalty
    try:
        return sym_solve((m + m.T) / 2.0, w.T @ y)
    except NumericalError:
        return pinv_sym((m + m.T) / 2.0) @ (w.T @ y)


def initial_estimator(
    dm: DesignMatrices, y: np.ndarray | None = None, mode: str = "auto"
) -> InitialFit:
    """Initial fit used for residuals and the error-variance estimate.

    ``mode="long"`` runs the interaction-full regression and errors out when
    it is rank deficient; ``"cv_ridge"`` picks the penalty of the
    generalized ridge by 10-fold cross-validated squared prediction error;
    ``"auto"`` tries the first and falls back to the second. The variance
    estimate is the plain mean of squared residuals.
    """
    y = dm.y if y is None else np.asarray(y, dtype=np.float64)
    if mode not in ("long", "cv_ridge", "auto"):
        raise ConfigError(f"unknown initial estimator mode '{mode}'")
    w = np.column_stack([dm.d[:, None], dm.x, dm.dxt])

    if mode in ("long", "auto"):
        theta, _, rank, _ = np.linalg.lstsq(w, y, rcond=None)
        if rank == w.shape[1]:
            resid = y - w @ theta
            return InitialFit(theta, resid, float(np.mean(resid**2)), "long")
        if mode == "long":
            raise NumericalError(
                "long regression infeasible (no overlap); use mode='cv_ridge'"
            )

    penalty = np.zeros((w.shape[1], w.shape[1]))
    if dm.k:
        penalty[-dm.k :, -dm.k :] = dm.vx
    lambdas = dm.n * np.logspace(-6.0, 8.0, 25)
    n_folds = min(10, dm.n)
    folds = np.arange(dm.n) % n_folds
    best_lam, best_score = None, math.inf
    for lam in lambdas:
        sse = 0.0
        try:
            for f_id in range(n_folds):
                val = folds == f_id
                theta = _gen_ridge_theta(w[~val], y[~val], lam, penalty)
                err = y[val] - w[val] @ theta
                sse += float(err @ err)
        except NumericalError:
            continue
        if sse < best_score:
            best_score, best_lam = sse, lam
    if best_lam is None:
        raise NumericalError("cross-validated ridge failed at every penalty")
    theta = _gen_ridge_theta(w, y, best_lam, penalty)
    resid = y - w @ theta
    return InitialFit(theta, resid, float(np.mean(resid**2)), "cv_ridge")


def _weights_of(fit_or_weights) -> np.ndarray:
    if hasattr(fit_or_weights, "weights"):
        return np.asarray(fit_or_weights.weights, dtype=np.float64)
    return np.asarray(fit_or_weights, dtype=np.float64)


def variance_robust(
    fit_or_weights,
    residuals: np.ndarray,
    cluster_id: np.ndarray | None = None,
    kind: str = "robust",
    sigma2: float | None = None,
) -> float:
    """Variance of the weighted estimator under the chosen error model.

    ``robust`` sums squared weighted residuals, ``cluster`` sums squared
    within-cluster weighted-residual totals, ``homo`` uses a known or
    estimated error variance times the squared weight norm.
    """
    a = _weights_of(fit_or_weights)
    if kind == "homo":
        if sigma2 is None:
            raise ConfigError("homoskedastic variance needs sigma2")
        return float(sigma2 * (a @ a))
    eps = np.asarray(residuals, dtype=np.float64)
    if kind == "robust":
        return float(np.sum((a * eps) ** 2))
    if kind == "cluster":
        if cluster_id is None:
            raise ConfigError("cluster-robust variance needs cluster ids")
        _, codes = np.unique(np.asarray(cluster_id), return_inverse=True)
        if codes.max() < 1:
            raise DataError("need >=2 clusters")
        sums = np.bincount(codes, weights=a * eps)
        return float(np.sum(sums**2))
    raise ConfigError(f"unknown se kind '{kind}'")


REPORT_FIELDS = (
    "estimator",
    "estimand",
    "n",
    "c",
    "alpha",
    "se_kind",
    "beta_hat",
    "sd",
    "maxbias",
    "half_length",
    "ci_lo",
    "ci_hi",
    "lambda_star",
    "sigma_hat",
    "lindeberg",
    "cond",
    "p_min",
    "p_max",
    "share_limited_overlap",
    "n_cells",
    "n_cells_no_overlap",
)


@dataclass(frozen=True)
class EstimateReport:
    """Point estimate with its bias-aware confidence interval and diagnostics."""

    estimator: str
    estimand: str
    n: int
    c: float
    alpha: float
    se_kind: str
    beta_hat: float
    sd: float
    maxbias: float
    half_length: float
    lambda_star: float
    sigma_hat: float
    lindeberg: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def ci(self) -> tuple[float, float]:
        return (self.beta_hat - self.half_length, self.beta_hat + self.half_length)

    def to_row(self) -> dict:
        """Flat record in the fixed serialization order."""
        lo, hi = self.ci
        base = {
            "estimator": self.estimator,
            "estimand": self.estimand,
            "n": self.n,
            "c": self.c,
            "alpha": self.alpha,
            "se_kind": self.se_kind,
            "beta_hat": self.beta_hat,
            "sd": self.sd,
            "maxbias": self.maxbias,
            "half_length": self.half_length,
            "ci_lo": lo,
            "ci_hi": hi,
            "lambda_star": self.lambda_star,
            "sigma_hat": self.sigma_hat,
            "lindeberg": self.lindeberg,
        }
        for key in REPORT_FIELDS:
            if key not in base:
                base[key] = self.diagnostics.get(key)
        return {key: base[key] for key in REPORT_FIELDS}


def feasible_ci(
    dm: DesignMatrices,
    y: np.ndarray | None = None,
    c_bound: float = 0.0,
    alpha: float = 0.05,
    se_kind: str = "robust",
    mode: str = "auto",
    grid: GridSpec | None = None,
    init: InitialFit | None = None,
) -> EstimateReport:
    """Full estimation pipeline at one heterogeneity bound.

    Residuals and the error-variance estimate come from the initial fit, the
    penalty minimizes the homoskedastic half-length proxy, and the reported
    interval uses the requested variance estimator at the chosen penalty.
    A large maximal weight share triggers a warning because the normal
    approximation may then be poor under limited overlap.

    Parameters
    ----------
    dm : DesignMatrices
        Fixed-design objects for the target estimand.
    y : ndarray, optional
        Outcome vector; defaults to the one carried on ``dm``.
    c_bound : float
        Upper bound on the standard deviation of effect heterogeneity, in
        outcome units. Zero reproduces the classic interaction-free CI.
    alpha : float
        One minus the nominal coverage.
    se_kind : {"homo", "robust", "cluster"}
        Variance estimator for the reported interval.
    mode : {"auto", "long", "cv_ridge"}
        Initial-fit strategy for residuals and the error scale.
    grid : GridSpec, optional
        Penalty-search controls.
    init : InitialFit, optional
        Reuse a previously computed initial fit (e.g. across a bound grid).

    Returns
    -------
    EstimateReport
        Point estimate, chosen penalty, worst-case bias, interval, and
        diagnostics, with a fixed serialization order.
    """
    y = dm.y if y is None else np.asarray(y, dtype=np.float64)
    if init is None:
        init = initial_estimator(dm, y, mode=mode)
    if init.sigma2 <= 0:
        sigma = math.sqrt(max(init.sigma2, 1e-300))
    else:
        sigma = init.sigma
    lam_star, fit = optimize_lambda(dm, c_bound, sigma, alpha, grid)
    fit = fit_at(dm, lam_star, diagnostics=True)
    v_hat = variance_robust(
        fit, init.residuals, cluster_id=dm.cluster_id, kind=se_kind, sigma2=init.sigma2
    )
    if v_hat <= 0:
        raise NumericalError("estimated variance is not positive")
    sd = math.sqrt(v_hat)
    mb = maxbias_fit(fit, dm, c_bound)
    half = half_length(mb, sd, alpha)
    lind = lindeberg_weight(fit.weights)
    if lind > LINDEBERG_WARN:
        warnings.warn(
            f"maximal weight share {lind:.3f} exceeds {LINDEBERG_WARN}; "
            "normal approximation may be unreliable under limited overlap"
        )
    diagnostics = {"cond": fit.cond, **overlap_summary(dm)}
    return EstimateReport(
        estimator="regulate",
        estimand=dm.estimand,
        n=dm.n,
        c=float(c_bound),
        alpha=alpha,
        se_kind=se_kind,
        beta_hat=fit.beta_hat if y is dm.y else float(fit.weights @ y),
        sd=sd,
        maxbias=mb,
        half_length=half,
        lambda_star=lam_star,
        sigma_hat=math.sqrt(init.sigma2),
        lindeberg=lind,
        diagnostics=diagnostics,
    )
