"""Worst-case bias under a bound on heterogeneity variance.

With the deviation coefficients constrained to the ellipsoid
``delta' Vx delta <= C^2``, any weight vector that is exact on the
treatment (``a'D = 1``) and orthogonal to the confounders (``a'X = 0``)
has worst-case bias

    C * sqrt(q' Vx^{-1} q),   q = (D*Xt)' a,

the supremum of a linear functional over the ellipsoid. Frontier fits have
an equivalent two-step expression that must agree with the general formula;
the test suite cross-checks both against a Monte Carlo supremum.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .design import DesignMatrices
from .errors import NumericalError
from .linalg import quad_form

# absolute tolerances on the weight preconditions
_WEIGHT_TOL = 1e-8
# dictionary component below this times the top eigenvalue counts as null space
_NULL_RTOL = 1e-10


@dataclass(frozen=True)
class HeterogeneityBound:
    """Upper bound C on the standard deviation of effect heterogeneity."""

    c: float

    def __post_init__(self):
        if not (self.c >= 0):
            raise ValueError("heterogeneity bound C must be nonnegative")


def _check_weights(a: np.ndarray, dm: DesignMatrices) -> None:
    if abs(float(a @ dm.d) - 1.0) > _WEIGHT_TOL or (
        dm.p and np.max(np.abs(a @ dm.x)) > _WEIGHT_TOL
    ):
        raise NumericalError(
            "weights not unbiased in (beta, gamma); general formula inapplicable"
        )


def maxbias_general(a: np.ndarray, dm: DesignMatrices, c_bound: float) -> float:
    """Worst-case bias of ``a' Y`` for any weights exact in (beta, gamma).

    Returns ``+inf`` when the weights load on a heterogeneity direction that
    the dictionary second moment leaves unidentified (null space of ``Vx``).
    """
    a = np.asarray(a, dtype=np.float64)
    _check_weights(a, dm)
    if c_bound == 0 or dm.k == 0:
        return 0.0
    q = dm.dxt.T @ a
    w, v = np.linalg.eigh(dm.vx)
    cutoff = _NULL_RTOL * max(float(w[-1]), 0.0)
    comps = v.T @ q
    null = w <= cutoff
    if np.any(null) and np.max(np.abs(comps[null])) > _WEIGHT_TOL:
        warnings.warn("heterogeneity direction unidentified: worst-case bias is unbounded")
        return math.inf
    keep = ~null
    val = float(np.sum(comps[keep] ** 2 / w[keep])) if keep.any() else 0.0
    return c_bound * math.sqrt(max(val, 0.0))


def maxbias_ridge(fit, dm: DesignMatrices, c_bound: float) -> float:
    """Worst-case bias of a frontier fit with finite positive penalty.

    Evaluated through the penalized propensity coefficients; falls back to
    the general formula when the fit picks up no heterogeneity direction.
    Agreement with :func:`maxbias_general` is a correctness requirement, not
    an assumption.
    """
    if fit.pi2 is None or not (fit.lam > 0) or math.isinf(fit.lam):
        raise NumericalError("two-step bias formula needs a fit with finite lambda > 0")
    denom = quad_form(fit.pi2, dm.vx)
    if denom <= 1e-14:
        return maxbias_general(fit.weights, dm, c_bound)
    numer = float(fit.weights @ (dm.x @ fit.pi1 + dm.dxt @ fit.pi2))
    return c_bound * abs(numer) / math.sqrt(denom)


def maxbias_fit(fit, dm: DesignMatrices, c_bound: float) -> float:
    """Worst-case bias for any frontier fit, including the limit endpoints."""
    if fit.pi2 is not None and fit.lam > 0 and math.isfinite(fit.lam):
        return maxbias_ridge(fit, dm, c_bound)
    return maxbias_general(fit.weights, dm, c_bound)


def maxbias_trimmed(dm: DesignMatrices, trim_c: float, c_bound: float) -> float:
    """Worst-case bias of the trimmed interaction-full regression.

    The weights are the within-subsample regression weights, zero outside;
    the bias is evaluated against the full-sample dictionary.
    """
    from .baselines import trimmed_weights

    a, _ = trimmed_weights(dm, trim_c)
    return maxbias_general(a, dm, c_bound)


@dataclass(frozen=True)
class FeasibilityCheck:
    """Result of the unbiased-weights feasibility probe."""

    feasible: bool
    residual: float
    witness: np.ndarray | None


def check_unbiased_feasible(dm: DesignMatrices) -> FeasibilityCheck:
    """Do weights with a'D = 1, a'X = 0, a'(D*Xt) = 0 exist?

    Solves the stacked constraints by least squares; feasibility means the
    minimum-norm solution meets every constraint to 1e-8. A design with an
    all-treated or all-untreated cell makes the system inconsistent, so no
    unbiased linear estimator exists there.
    """
    cons = np.column_stack([dm.d[:, None], dm.x, dm.dxt])
    target = np.zeros(cons.shape[1])
    target[0] = 1.0
    witness, _, _, _ = np.linalg.lstsq(cons.T, target, rcond=None)
    residual = float(np.max(np.abs(cons.T @ witness - target)))
    feasible = residual <= _WEIGHT_TOL
    return FeasibilityCheck(
        feasible=feasible,
        residual=residual,
        witness=witness if feasible else None,
    )
