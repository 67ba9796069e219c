"""Penalized propensity regression and the bias-variance frontier weights.

For a penalty ``lam`` the first step solves

    min_{pi1, pi2} ||D - X pi1 - (D*Xt) pi2||^2 + lam * pi2' Vx pi2,

and the second step uses the residual as an instrument for the treatment,
giving weights ``a = dtilde / (dtilde' D)`` and the point estimate
``a' Y``. The same coefficient solves the generalized ridge least squares
problem that penalizes the interaction coefficients, which is asserted by
the test suite rather than assumed.

``lam = inf`` maps exactly to the interaction-free regression weights and
``lam = 0`` is never solved directly: its analytic limit is the
interaction-full regression restricted to the subsample with overlap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .design import DesignMatrices, level_coefficients, propensity_fit, subsample_design
from .errors import ConfigError, NumericalError
from .linalg import cond_sym, sym_solve

_SINGULAR_MSG = "ridge system singular; increase lambda or drop collinear columns"
_DEGENERATE_MSG = "degenerate instrument: no residual treatment variation"


@dataclass(frozen=True)
class RidgeFit:
    """One point on the bias-variance frontier.

    ``pi1``/``pi2`` are the penalized propensity coefficients (``pi1`` may be
    ``None`` for the analytic ``lam = 0`` limit, whose coefficients live on a
    subsample), ``weights`` satisfies ``weights' D = 1`` and
    ``weights' X = 0``, and ``beta_hat = weights' Y``.
    """

    lam: float
    pi1: np.ndarray | None
    pi2: np.ndarray | None
    weights: np.ndarray
    dtilde: np.ndarray
    beta_hat: float
    cond: float | None = None

    @property
    def norm(self) -> float:
        """Euclidean norm of the weights (sd per unit error sd)."""
        return float(np.linalg.norm(self.weights))


def penalized_propensity(dm: DesignMatrices, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Solve the penalized propensity regression for a finite positive penalty.

    Uses the Schur complement of the confounder block, which stays accurate
    for penalties many orders of magnitude apart.
    """
    if not (lam > 0) or not math.isfinite(lam):
        raise ConfigError("penalized_propensity needs a finite lambda > 0")
    x, g, d = dm.x, dm.dxt, dm.d
    try:
        xtx_fac = scipy.linalg.cho_factor(x.T @ x, check_finite=False)
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(_SINGULAR_MSG) from exc
    if dm.k == 0:
        pi1 = scipy.linalg.cho_solve(xtx_fac, x.T @ d, check_finite=False)
        return pi1, np.empty(0)
    a = x.T @ g
    xinv_a = scipy.linalg.cho_solve(xtx_fac, a, check_finite=False)
    xinv_xd = scipy.linalg.cho_solve(xtx_fac, x.T @ d, check_finite=False)
    schur = g.T @ g - a.T @ xinv_a + lam * dm.vx
    schur = (schur + schur.T) / 2.0
    rhs = g.T @ d - a.T @ xinv_xd
    try:
        pi2 = sym_solve(schur, rhs)
    except NumericalError as exc:
        raise NumericalError(_SINGULAR_MSG) from exc
    pi1 = scipy.linalg.cho_solve(xtx_fac, x.T @ (d - g @ pi2), check_finite=False)
    return pi1, pi2


def _weights_from_dtilde(dm: DesignMatrices, dtilde: np.ndarray) -> np.ndarray:
    dd = float(dtilde @ dm.d)
    if dd <= 1e-12:
        raise NumericalError(_DEGENERATE_MSG)
    return dtilde / dd


def fit_at(
    dm: DesignMatrices,
    lam: float,
    y: np.ndarray | None = None,
    diagnostics: bool = True,
) -> RidgeFit:
    """Frontier fit at penalty ``lam`` (``0``, positive finite, or ``inf``)."""
    y = dm.y if y is None else np.asarray(y, dtype=np.float64)
    if lam < 0:
        raise ConfigError("lambda must be nonnegative")
    if math.isinf(lam):
        pi1 = level_coefficients(dm, dm.d)
        dtilde = dm.d - dm.x @ pi1
        a = _weights_from_dtilde(dm, dtilde)
        cond = cond_sym(dm.x.T @ dm.x) if diagnostics else None
        return RidgeFit(
            lam=math.inf,
            pi1=pi1,
            pi2=np.zeros(dm.k),
            weights=a,
            dtilde=dtilde,
            beta_hat=float(a @ y),
            cond=cond,
        )
    if lam == 0:
        return fit_limit_zero(dm, y)
    pi1, pi2 = penalized_propensity(dm, lam)
    dtilde = dm.d - dm.x @ pi1 - dm.dxt @ pi2
    a = _weights_from_dtilde(dm, dtilde)
    cond = None
    if diagnostics:
        xinv = np.linalg.pinv(dm.x.T @ dm.x)
        schur = dm.dxt.T @ dm.dxt - (dm.x.T @ dm.dxt).T @ xinv @ (dm.x.T @ dm.dxt)
        cond = cond_sym(schur + lam * dm.vx) if dm.k else cond_sym(dm.x.T @ dm.x)
    return RidgeFit(
        lam=float(lam),
        pi1=pi1,
        pi2=pi2,
        weights=a,
        dtilde=dtilde,
        beta_hat=float(a @ y),
        cond=cond,
    )


def _long_projection(x_block: np.ndarray, d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients and residual of projecting d on a block of columns."""
    coef, _, _, _ = np.linalg.lstsq(x_block, d, rcond=None)
    return coef, d - x_block @ coef


def _full_rank(dm: DesignMatrices) -> bool:
    w = np.column_stack([dm.d[:, None], dm.x, dm.dxt])
    return np.linalg.matrix_rank(w) == w.shape[1]


def fit_limit_zero(dm: DesignMatrices, y: np.ndarray | None = None) -> RidgeFit:
    """Analytic zero-penalty limit of the frontier.

    When the interaction-full regression is feasible this is just that
    regression. On a saturated cell design with no-overlap cells the limit
    is the interaction-full regression on the subsample of overlap cells,
    with weights equal to zero on the excluded rows.
    """
    y = dm.y if y is None else np.asarray(y, dtype=np.float64)
    if _full_rank(dm):
        block = np.column_stack([dm.x, dm.dxt])
        coef, dtilde = _long_projection(block, dm.d)
        a = _weights_from_dtilde(dm, dtilde)
        return RidgeFit(
            lam=0.0,
            pi1=coef[: dm.p],
            pi2=coef[dm.p :],
            weights=a,
            dtilde=dtilde,
            beta_hat=float(a @ y),
            cond=None,
        )
    if not (dm.cells_exhaustive and dm.cell_id is not None):
        raise NumericalError(
            "lambda=0 limit undefined: design is rank-deficient and not a saturated cell design"
        )
    mask = np.zeros(dm.n, dtype=bool)
    for c in np.unique(dm.cell_id):
        in_cell = dm.cell_id == c
        dc = dm.d[in_cell]
        if dc.min() < dc.max():  # both arms present
            mask |= in_cell
    if not mask.any() or dm.d[mask].min() == dm.d[mask].max():
        raise NumericalError("no overlap anywhere; limit undefined")
    sub = subsample_design(dm, mask)
    block = np.column_stack([sub.x, sub.dxt])
    coef, dtilde_sub = _long_projection(block, sub.d)
    a_sub = _weights_from_dtilde(sub, dtilde_sub)
    a = np.zeros(dm.n)
    a[mask] = a_sub
    dtilde = np.zeros(dm.n)
    dtilde[mask] = dtilde_sub
    return RidgeFit(
        lam=0.0,
        pi1=None,
        pi2=None,
        weights=a,
        dtilde=dtilde,
        beta_hat=float(a @ y),
        cond=None,
    )


def ridge_weights_discrete(dm: DesignMatrices, lam: float) -> np.ndarray:
    """Closed-form frontier weights on a saturated cell design.

    Equals ``fit_at(dm, lam).weights``: the residualized treatment times one
    minus the dictionary tilt, normalized to unit inner product with the
    treatment. Rows in cells without overlap get weight exactly zero.
    """
    if not dm.cells_exhaustive:
        raise ConfigError("closed-form weights require a saturated cell design")
    if not (lam > 0) or math.isinf(lam):
        raise ConfigError("closed-form weights need a finite lambda > 0")
    p = propensity_fit(dm)
    dres = dm.d - p
    if dm.k == 0:
        w = dres.copy()
    else:
        z = dres[:, None] * dm.xt
        pi2 = sym_solve(z.T @ z + lam * dm.vx, z.T @ dres)
        w = dres * (1.0 - dm.xt @ pi2)
    denom = float(w @ dm.d)
    if abs(denom) <= 1e-12:
        raise NumericalError(_DEGENERATE_MSG)
    return w / denom


def default_lambda_grid(
    dm: DesignMatrices, n_points: int = 40, lo: float = 1e-8, hi: float = 1e12
) -> np.ndarray:
    """Coarse log-spaced penalty grid, scaled by the sample size."""
    return dm.n * np.logspace(math.log10(lo), math.log10(hi), n_points)


def lambda_path(
    dm: DesignMatrices,
    c_bound: float,
    sigma: float,
    lambdas: np.ndarray | None = None,
    y: np.ndarray | None = None,
) -> list[dict]:
    """Evaluate (lambda, sd, maxbias, beta_hat) along a penalty grid.

    Handy for plotting the frontier; includes the infinite-penalty endpoint.
    """
    from .bias import maxbias_fit

    if lambdas is None:
        lambdas = default_lambda_grid(dm)
    rows = []
    for lam in [*np.asarray(lambdas, dtype=np.float64), math.inf]:
        try:
            fit = fit_at(dm, lam, y=y, diagnostics=False)
        except NumericalError:
            continue
        rows.append(
            {
                "lam": float(lam),
                "sd": sigma * fit.norm,
                "maxbias": maxbias_fit(fit, dm, c_bound),
                "beta_hat": fit.beta_hat,
            }
        )
    return rows


def lambda_path_csv(dm: DesignMatrices, c_bound: float, sigma: float, path,
                    lambdas: np.ndarray | None = None, y: np.ndarray | None = None) -> None:
    """Dump the penalty path as CSV (lam, sd, maxbias, beta_hat)."""
    rows = lambda_path(dm, c_bound, sigma, lambdas, y)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("lam,sd,maxbias,beta_hat\n")
        for r in rows:
            fh.write(
                f"{r['lam']!r},{r['sd']!r},{r['maxbias']!r},{r['beta_hat']!r}\n"
            )
