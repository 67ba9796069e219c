"""Figure rendering for report outputs.

Renders the sensitivity sweep (point estimates with both interval bands as
the bound grows) and the penalty path to image files next to the delimited
output. Uses the Agg backend so rendering works headless, and strips
library metadata from PNGs so repeated runs produce identical bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_PNG_METADATA = {"Software": None}


def _save(fig, path) -> None:
    path = str(path)
    kwargs = {"dpi": 150, "bbox_inches": "tight"}
    if path.lower().endswith(".png"):
        kwargs["metadata"] = _PNG_METADATA
    fig.savefig(path, **kwargs)
    plt.close(fig)


def sensitivity_figure(curve, path, ylabel: str = "estimate") -> None:
    """Plot per-bound estimates and intervals for both estimators.

    ``curve`` is a SensitivityCurve; bounds where an estimator failed are
    simply absent from its band.
    """
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    styles = {
        "regulate": {"color": "#1f77b4", "label": "regulate"},
        "short_bc": {"color": "#d62728", "label": "short (bias-corrected)"},
    }
    series = {"regulate": curve.regulate, "short_bc": curve.short_bc}
    for name, reports in series.items():
        cs, lo, hi, beta = [], [], [], []
        for c, rep in zip(curve.grid, reports):
            if rep is None:
                continue
            cs.append(c)
            l, h = rep.ci
            lo.append(l)
            hi.append(h)
            beta.append(rep.beta_hat)
        if not cs:
            continue
        style = styles[name]
        ax.plot(cs, beta, marker="o", ms=3, lw=1.2, color=style["color"],
                label=f"{style['label']} estimate")
        ax.fill_between(cs, lo, hi, color=style["color"], alpha=0.18,
                        label=f"{style['label']} CI")
    ax.axhline(0.0, color="black", lw=0.8, ls=":")
    if curve.breakdown_c is not None:
        ax.axvline(curve.breakdown_c, color="gray", lw=0.8, ls="--",
                   label=f"breakdown C = {curve.breakdown_c:g}")
    ax.set_xlabel("heterogeneity bound C")
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=8, loc="best")
    _save(fig, path)


def lambda_path_figure(rows, path) -> None:
    """Plot sd and worst-case bias along the penalty path."""
    finite = [r for r in rows if np.isfinite(r["lam"])]
    if not finite:
        return
    lams = [r["lam"] for r in finite]
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    ax.plot(lams, [r["sd"] for r in finite], label="sd", color="#1f77b4")
    ax.plot(lams, [r["maxbias"] for r in finite], label="worst-case bias",
            color="#d62728")
    ax.set_xscale("log")
    ax.set_xlabel("penalty")
    ax.set_ylabel("sd / worst-case bias")
    ax.legend(fontsize=8)
    _save(fig, path)
