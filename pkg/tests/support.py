"""Shared generators for randomized design tests.

Designs are saturated cell layouts drawn with explicit overlap control so
every draw is valid: overlap cells always get at least one unit in each
arm, no-overlap cells are all-treated or all-untreated.
"""

from __future__ import annotations

import numpy as np

from regulate import Dataset, build_design, saturate


def make_cells_dataset(
    rng: np.random.Generator,
    n_cells: int,
    min_size: int = 4,
    max_size: int = 24,
    p_range: tuple[float, float] = (0.2, 0.8),
    no_overlap_cells: int = 0,
    no_overlap_side: str = "treated",
    min_arm: int = 1,
) -> Dataset:
    """Saturated dataset with the requested number of cells.

    The last ``no_overlap_cells`` cells are one-armed; the rest always have
    at least ``min_arm`` units in each arm.
    """
    max_size = max(max_size, min_size)
    labels, treat = [], []
    for c in range(n_cells):
        size = int(rng.integers(min_size, max_size + 1))
        if c >= n_cells - no_overlap_cells:
            n1 = size if no_overlap_side == "treated" else 0
        else:
            p = rng.uniform(*p_range)
            n1 = int(np.clip(round(p * size), min_arm, size - min_arm))
        labels.extend([float(c)] * size)
        treat.extend([1] * n1 + [0] * (size - n1))
    ds = Dataset(
        outcome=np.zeros(len(labels)),
        treatment=np.array(treat),
        covariates=np.array(labels)[:, None],
        covariate_names=("cell",),
        covariate_kinds=("discrete",),
    )
    return saturate(ds, ("cell",))


def random_design(
    rng: np.random.Generator,
    n_cells: int | None = None,
    max_cells: int = 8,
    estimand: str = "ate",
    **kwargs,
):
    if n_cells is None:
        n_cells = int(rng.integers(2, max_cells + 1))
    ds = make_cells_dataset(rng, n_cells, **kwargs)
    return build_design(ds, estimand)


def random_delta(rng: np.random.Generator, dm, c_bound: float) -> np.ndarray:
    """Random heterogeneity coefficients on the boundary of the C-ellipsoid."""
    if dm.k == 0 or c_bound == 0:
        return np.zeros(dm.k)
    v = rng.standard_normal(dm.k)
    scale = float(v @ dm.vx @ v)
    return c_bound * v / np.sqrt(scale)


def mean_response(dm, beta: float, gamma: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Conditional mean d * (beta + xt delta) + x gamma on the fixed design."""
    tau = beta + dm.xt @ delta
    return dm.d * tau + dm.x @ gamma


def draw_y(
    rng: np.random.Generator,
    dm,
    beta: float = 1.0,
    gamma: np.ndarray | None = None,
    delta: np.ndarray | None = None,
    sigma: float = 1.0,
) -> np.ndarray:
    gamma = np.zeros(dm.p) if gamma is None else gamma
    delta = np.zeros(dm.k) if delta is None else delta
    return mean_response(dm, beta, gamma, delta) + sigma * rng.standard_normal(dm.n)
