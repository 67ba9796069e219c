"""Small shared linear-algebra helpers.

Symmetric solves go through Cholesky first and fall back to a pivoted
symmetric-indefinite factorization; genuinely singular systems raise
``NumericalError`` so callers can attach a domain-specific message.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import NumericalError

# Relative eigenvalue cutoff for pseudo-inverses of symmetric matrices.
PINV_RTOL = 1e-10


def sym_solve(M: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve M x = b for symmetric M, preferring a Cholesky factorization."""
    try:
        c, low = scipy.linalg.cho_factor(M, check_finite=False)
        return scipy.linalg.cho_solve((c, low), b, check_finite=False)
    except (scipy.linalg.LinAlgError, ValueError):
        pass
    try:
        with np.errstate(all="ignore"):
            x = scipy.linalg.solve(M, b, assume_a="sym", check_finite=False)
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"singular symmetric system: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise NumericalError("singular symmetric system: non-finite solution")
    return x


def pinv_sym(M: np.ndarray, rtol: float = PINV_RTOL) -> np.ndarray:
    """Eigendecomposition-based pseudo-inverse of a symmetric matrix.

    Eigenvalues below ``rtol`` times the largest eigenvalue are treated as
    zero.
    """
    w, v = np.linalg.eigh(M)
    cutoff = rtol * max(np.max(np.abs(w)), 0.0)
    inv_w = np.where(np.abs(w) > cutoff, 1.0 / np.where(w == 0.0, 1.0, w), 0.0)
    return (v * inv_w) @ v.T


def cond_sym(M: np.ndarray) -> float:
    """Condition number of a symmetric matrix (ratio of absolute eigenvalues)."""
    if M.size == 0:
        return 1.0
    w = np.abs(np.linalg.eigvalsh(M))
    small = np.min(w)
    if small == 0.0:
        return np.inf
    return float(np.max(w) / small)


def weighted_mean(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Column means of ``x`` under weights ``w``, accumulated in extended precision."""
    wl = w.astype(np.longdouble)
    num = x.astype(np.longdouble).T @ wl
    den = wl.sum()
    return np.asarray(num / den, dtype=np.float64)


def quad_form(v: np.ndarray, M: np.ndarray) -> float:
    """v' M v as a float."""
    return float(v @ (M @ v))
