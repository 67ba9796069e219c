"""Fixed-design objects for a chosen target estimand.

``build_design`` turns a validated Dataset into the matrices every
estimator downstream consumes: the treatment vector, the confounder block
with intercept, the demeaned heterogeneity dictionary, its treatment
interaction, and the dictionary second-moment matrix.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .dataset import Dataset
from .errors import ConfigError, NumericalError
from .linalg import pinv_sym, weighted_mean

ESTIMANDS = ("ate", "att", "atu")


def normalize_estimand(kind: str) -> str:
    k = str(kind).lower()
    if k not in ESTIMANDS:
        raise ConfigError(f"unknown estimand '{kind}' (expected one of {ESTIMANDS})")
    return k


@dataclass(frozen=True)
class DesignMatrices:
    """Fixed-design objects for one estimand.

    Attributes
    ----------
    d : (n,) treatment vector (float 0/1).
    x : (n, p) confounder block, intercept in column 0.
    xt : (n, k) demeaned heterogeneity dictionary.
    dxt : (n, k) row-wise product ``d * xt``.
    vx : (k, k) dictionary second moment ``xt' xt / n``.
    estimand : one of "ate", "att", "atu".
    y : (n,) outcome carried along for fitting operations.
    """

    d: np.ndarray
    x: np.ndarray
    xt: np.ndarray
    dxt: np.ndarray
    vx: np.ndarray
    estimand: str
    y: np.ndarray
    x_names: tuple[str, ...]
    dict_names: tuple[str, ...]
    cluster_id: np.ndarray | None = None
    cell_id: np.ndarray | None = None
    cells_exhaustive: bool = False
    source: Dataset | None = None

    @property
    def n(self) -> int:
        return self.d.shape[0]

    @property
    def k(self) -> int:
        return self.xt.shape[1]

    @property
    def p(self) -> int:
        return self.x.shape[1]


def _demean_weights(d: np.ndarray, estimand: str) -> np.ndarray:
    if estimand == "ate":
        return np.ones_like(d)
    if estimand == "att":
        return d.copy()
    return 1.0 - d


def build_design(ds: Dataset, estimand: str = "ate") -> DesignMatrices:
    """Build the design objects for ``estimand``.

    The heterogeneity dictionary is demeaned with weights matching the
    estimand: uniform for the ATE, treated shares for the ATT, untreated
    shares for the ATU. Warns when the dictionary second-moment matrix is
    rank deficient, which leaves some heterogeneity directions unidentified.
    """
    estimand = normalize_estimand(estimand)
    d = ds.treatment.astype(np.float64)
    if estimand == "att" and d.sum() == 0:
        raise ConfigError("ATT requires at least one treated unit")
    if estimand == "atu" and (1 - d).sum() == 0:
        raise ConfigError("ATU requires at least one untreated unit")

    level_idx = [
        i for i, name in enumerate(ds.covariate_names)
        if name not in ds.dictionary_only
    ]
    dict_idx = [
        i for i, name in enumerate(ds.covariate_names)
        if name not in ds.level_only
    ]
    x = np.column_stack([np.ones(ds.n)] + [ds.covariates[:, i] for i in level_idx])
    x_names = ("intercept",) + tuple(ds.covariate_names[i] for i in level_idx)

    raw = ds.covariates[:, dict_idx] if dict_idx else np.empty((ds.n, 0))
    w = _demean_weights(d, estimand)
    if raw.shape[1]:
        xt = raw - weighted_mean(raw, w)
    else:
        xt = raw.copy()
    dxt = d[:, None] * xt
    vx = xt.T @ xt / ds.n
    vx = (vx + vx.T) / 2.0

    k = xt.shape[1]
    if k and np.linalg.matrix_rank(vx, tol=1e-10 * max(vx.shape)) < k:
        warnings.warn("Vx rank-deficient: some heterogeneity directions are unidentified")

    return DesignMatrices(
        d=d,
        x=x,
        xt=xt,
        dxt=dxt,
        vx=vx,
        estimand=estimand,
        y=ds.outcome.copy(),
        x_names=x_names,
        dict_names=tuple(ds.covariate_names[i] for i in dict_idx),
        cluster_id=ds.cluster_id,
        cell_id=ds.cell_id,
        cells_exhaustive=ds.cells_exhaustive,
        source=ds,
    )


def level_coefficients(dm: DesignMatrices, target: np.ndarray) -> np.ndarray:
    """Coefficients of regressing ``target`` on the confounder block.

    Falls back to a symmetric pseudo-inverse with a warning when the block
    is rank deficient.
    """
    xtx = dm.x.T @ dm.x
    rhs = dm.x.T @ target
    w = np.linalg.eigvalsh(xtx)
    if w[0] <= 1e-10 * max(w[-1], 0.0):
        warnings.warn("confounder block rank-deficient; using pseudo-inverse")
        return pinv_sym(xtx) @ rhs
    return np.linalg.solve(xtx, rhs)


def propensity_fit(dm: DesignMatrices) -> np.ndarray:
    """Fitted values of the linear regression of treatment on the confounders.

    On saturated cell designs this equals the within-cell treated fraction.
    """
    return dm.x @ level_coefficients(dm, dm.d)


def overlap_summary(dm: DesignMatrices) -> dict:
    """Small overlap diagnostic: propensity range and no-overlap exposure."""
    p = propensity_fit(dm)
    pq = p * (1.0 - p)
    out = {
        "p_min": float(p.min()),
        "p_max": float(p.max()),
        "share_limited_overlap": float(np.mean(pq <= 0.09)),
    }
    if dm.cells_exhaustive and dm.cell_id is not None:
        cells = np.unique(dm.cell_id)
        no_overlap = 0
        for c in cells:
            dc = dm.d[dm.cell_id == c]
            if dc.min() == dc.max():
                no_overlap += 1
        out["n_cells"] = int(cells.size)
        out["n_cells_no_overlap"] = int(no_overlap)
    return out


def to_csv(dm: DesignMatrices, path) -> None:
    """Dump the design as CSV: treatment, intercept, confounders, interactions."""
    from .dataset import _write_csv

    columns = {"treatment": dm.d}
    for j, name in enumerate(dm.x_names):
        columns[name] = dm.x[:, j]
    for j, name in enumerate(dm.dict_names):
        columns[f"d_x_{name}"] = dm.dxt[:, j]
    _write_csv(path, columns)


def subsample_design(dm: DesignMatrices, mask: np.ndarray) -> DesignMatrices:
    """Design rebuilt on a row subset, re-deriving saturation when possible.

    For saturated cell designs the indicator block is rebuilt from the cell
    ids of the surviving rows so that empty cells do not leave all-zero
    columns behind.
    """
    if dm.source is None:
        raise NumericalError("design carries no source dataset; cannot subsample")
    mask = np.asarray(mask, dtype=bool)
    sub = dm.source.subset(mask)
    if dm.cells_exhaustive and sub.cell_id is not None:
        cells = np.unique(sub.cell_id)
        names = []
        cols = []
        for c in cells[1:]:
            cols.append((sub.cell_id == c).astype(np.float64))
            names.append(f"cell_{int(c)}")
        sub = replace(
            sub,
            covariates=np.column_stack(cols) if cols else np.empty((sub.n, 0)),
            covariate_names=tuple(names),
            covariate_kinds=("discrete",) * len(names),
            cells_exhaustive=True,
            level_only=frozenset(),
            dictionary_only=frozenset(),
        )
    return build_design(sub, dm.estimand)
