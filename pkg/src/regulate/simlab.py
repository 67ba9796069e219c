"""Fixed-design Monte Carlo laboratory.

The design (covariate cells and treatment assignment) is held fixed across
replications and only the error draws change, which makes worst-case
coverage a sharp test: placing the heterogeneity coefficients on the
boundary of the bound ellipsoid in the least favorable direction should
drive coverage of a bias-aware interval exactly to its nominal level.

The DGP can be specified synthetically (cell sizes and propensities) or
taken from an existing dataset, with effects given per cell or through a
target average plus a heterogeneity magnitude. Replications use
independently seeded generator streams keyed by (master seed, replication
index), so results do not depend on execution order or worker count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import bias as bias_mod
from .baselines import (
    DEFAULT_TRIM_C,
    bias_corrected_ci,
    long_weights,
    short_fit,
    short_weights,
    trimmed_weights,
)
from .dataset import Dataset
from .design import DesignMatrices, build_design
from .errors import ConfigError, NumericalError
from .inference import (
    cv_folded_normal,
    feasible_ci,
    initial_estimator,
    optimize_lambda,
    variance_robust,
)
from .linalg import pinv_sym, quad_form


def make_worstcase_delta(
    dm: DesignMatrices,
    c_bound: float,
    direction: np.ndarray | None = None,
    weights: np.ndarray | None = None,
) -> np.ndarray:
    """Heterogeneity coefficients on the boundary of the bound ellipsoid.

    With an explicit ``direction`` the vector is simply normalized to the
    boundary. Otherwise the direction maximizes the bias of the given
    weights (the short-regression weights by default), i.e. it is the
    maximizer of the linear bias functional over the ellipsoid.
    """
    if c_bound < 0:
        raise ConfigError("bound must be nonnegative")
    if c_bound == 0:
        return np.zeros(dm.k)
    if direction is not None:
        v = np.asarray(direction, dtype=np.float64)
        if v.shape != (dm.k,) or not np.any(v):
            raise ConfigError("zero or mis-sized direction")
        denom = quad_form(v, dm.vx)
        if denom <= 0:
            raise NumericalError("direction lies in the null space of Vx")
        return c_bound * v / math.sqrt(denom)
    a = short_weights(dm) if weights is None else np.asarray(weights, dtype=np.float64)
    u = pinv_sym(dm.vx) @ (dm.dxt.T @ a)
    denom = quad_form(u, dm.vx)
    if denom <= 1e-300:
        raise NumericalError("weights carry no heterogeneity bias; direction undefined")
    return c_bound * u / math.sqrt(denom)


@dataclass(frozen=True)
class DgpSpec:
    """Fixed-design data generating process.

    Either ``cell_sizes``/``cell_propensities`` (synthetic cells) or
    ``dataset`` must be given. Effects come from ``tau_values`` (one per
    cell, synthetic path only) or from ``ate`` plus heterogeneity magnitude
    ``c0`` along ``direction`` ("worst_short", "first", or an explicit
    vector).
    """

    cell_sizes: tuple[int, ...] | None = None
    cell_propensities: tuple[float, ...] | None = None
    dataset: Dataset | None = None
    estimand: str = "ate"
    tau_values: tuple[float, ...] | None = None
    ate: float | None = None
    c0: float | None = None
    direction: object = "worst_short"
    gamma: tuple[float, ...] | None = None
    sigma0: float = 1.0
    error_law: str = "gaussian"
    t_df: int = 5

    def __post_init__(self):
        synthetic = self.cell_sizes is not None
        if synthetic == (self.dataset is not None):
            raise ConfigError("give either synthetic cells or a dataset, not both")
        if synthetic:
            if self.cell_propensities is None or len(self.cell_propensities) != len(
                self.cell_sizes
            ):
                raise ConfigError("cell_propensities must match cell_sizes")
            if any(s < 1 for s in self.cell_sizes):
                raise ConfigError("cell sizes must be positive")
            if any(not (0.0 <= p <= 1.0) for p in self.cell_propensities):
                raise ConfigError("propensities must lie in [0, 1]")
        has_tau = self.tau_values is not None
        has_bound = self.ate is not None and self.c0 is not None
        if has_tau == has_bound:
            raise ConfigError("give per-cell tau values or (ate, c0), not both")
        if has_tau and not synthetic:
            raise ConfigError("per-cell tau values need synthetic cells")
        if self.sigma0 <= 0:
            raise ConfigError("sigma0 must be positive")
        if self.error_law not in ("gaussian", "scaled_t"):
            raise ConfigError(f"unknown error law '{self.error_law}'")
        if self.error_law == "scaled_t" and self.t_df <= 2:
            raise ConfigError("scaled t errors need df > 2")


@dataclass(frozen=True)
class FixedDgp:
    """Materialized fixed design plus the true effect structure."""

    dm: DesignMatrices
    tau: np.ndarray
    beta_target: float
    delta: np.ndarray
    gamma: np.ndarray
    mu: np.ndarray
    c_true: float
    sigma0: float
    error_law: str
    t_df: int


def _synthetic_dataset(spec: DgpSpec) -> Dataset:
    from .dataset import saturate

    labels = []
    treat = []
    for c, (size, p) in enumerate(zip(spec.cell_sizes, spec.cell_propensities)):
        n1 = int(round(p * size))
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


def _target_mean(tau: np.ndarray, d: np.ndarray, estimand: str) -> float:
    if estimand == "ate":
        return float(np.mean(tau))
    if estimand == "att":
        return float(tau @ d / d.sum())
    return float(tau @ (1.0 - d) / (1.0 - d).sum())


def build_dgp(spec: DgpSpec) -> FixedDgp:
    """Materialize the fixed design and true parameters for a spec."""
    ds = spec.dataset if spec.dataset is not None else _synthetic_dataset(spec)
    dm = build_design(ds, spec.estimand)

    if spec.tau_values is not None:
        if ds.cell_id is None or len(spec.tau_values) != int(ds.cell_id.max()) + 1:
            raise ConfigError("tau_values must give one effect per cell")
        tau = np.asarray(spec.tau_values, dtype=np.float64)[ds.cell_id]
        beta = _target_mean(tau, dm.d, dm.estimand)
        delta, _, _, _ = np.linalg.lstsq(dm.xt, tau - beta, rcond=None)
        if np.max(np.abs(dm.xt @ delta - (tau - beta))) > 1e-8:
            raise ConfigError("per-cell effects are not representable in the dictionary")
    else:
        beta = float(spec.ate)
        if isinstance(spec.direction, str):
            if spec.direction == "worst_short":
                delta = make_worstcase_delta(dm, spec.c0)
            elif spec.direction == "first":
                e1 = np.zeros(dm.k)
                e1[0] = 1.0
                delta = make_worstcase_delta(dm, spec.c0, direction=e1)
            else:
                raise ConfigError(f"unknown direction '{spec.direction}'")
        else:
            delta = make_worstcase_delta(
                dm, spec.c0, direction=np.asarray(spec.direction, dtype=np.float64)
            )
        tau = beta + dm.xt @ delta
        implied = quad_form(delta, dm.vx)
        if spec.c0 > 0 and abs(implied - spec.c0**2) > 1e-10 * max(1.0, spec.c0**2):
            raise NumericalError("implied heterogeneity variance misses c0^2")

    gamma = (
        np.zeros(dm.p)
        if spec.gamma is None
        else np.asarray(spec.gamma, dtype=np.float64)
    )
    if gamma.shape != (dm.p,):
        raise ConfigError(f"gamma must have length {dm.p} (intercept included)")
    mu = dm.d * tau + dm.x @ gamma
    return FixedDgp(
        dm=dm,
        tau=tau,
        beta_target=beta,
        delta=delta,
        gamma=gamma,
        mu=mu,
        c_true=math.sqrt(max(quad_form(delta, dm.vx), 0.0)),
        sigma0=spec.sigma0,
        error_law=spec.error_law,
        t_df=spec.t_df,
    )


def _draw_errors(dgp: FixedDgp, rng: np.random.Generator) -> np.ndarray:
    n = dgp.dm.n
    if dgp.error_law == "gaussian":
        return dgp.sigma0 * rng.standard_normal(n)
    scale = math.sqrt(dgp.t_df / (dgp.t_df - 2.0))
    return dgp.sigma0 * rng.standard_t(dgp.t_df, n) / scale


@dataclass(frozen=True)
class EstimatorMetrics:
    """Aggregated Monte Carlo metrics for one estimator."""

    status: str
    worst_case_bias: float = math.nan
    mean_sd: float = math.nan
    mc_sd: float = math.nan
    mean_ci_length: float = math.nan
    ci_length_ratio: float = math.nan
    coverage: float = math.nan


@dataclass(frozen=True)
class McResult:
    """Monte Carlo study output, reproducible from (spec, reps, master_seed)."""

    per_estimator: dict
    reps: int
    master_seed: int
    alpha: float
    mode: str
    beta_target: float


MC_COLUMNS = (
    "estimator",
    "status",
    "worst_case_bias",
    "mean_sd",
    "mc_sd",
    "mean_ci_length",
    "ci_length_ratio",
    "coverage",
    "reps",
    "master_seed",
)

DEFAULT_ESTIMATORS = ("regulate", "short", "short_bc", "long", "trimmed")


def _threads(threads: int | None) -> int:
    if threads is not None:
        return max(int(threads), 1)
    return max(int(os.environ.get("REGULATE_THREADS", "1")), 1)


def _oracle_payload(dgp: FixedDgp, estimators, alpha: float, trim_c: float):
    """Per-estimator weights and fixed half-lengths for oracle-mode speed."""
    dm = dgp.dm
    z = cv_folded_normal(0.0, alpha)
    entries = {}
    for name in estimators:
        try:
            if name == "regulate":
                _, fit = optimize_lambda(dm, dgp.c_true, dgp.sigma0, alpha)
                a = fit.weights
                mb = bias_mod.maxbias_fit(fit, dm, dgp.c_true)
                sd = dgp.sigma0 * float(np.linalg.norm(a))
                half = sd * cv_folded_normal(mb / sd, alpha)
            elif name in ("short", "short_bc"):
                a = short_weights(dm)
                mb = bias_mod.maxbias_general(a, dm, dgp.c_true)
                sd = dgp.sigma0 * float(np.linalg.norm(a))
                half = sd * (cv_folded_normal(mb / sd, alpha) if name == "short_bc" else z)
            elif name == "long":
                a = long_weights(dm)
                mb = 0.0
                sd = dgp.sigma0 * float(np.linalg.norm(a))
                half = z * sd
            elif name == "trimmed":
                a, _ = trimmed_weights(dm, trim_c)
                mb = bias_mod.maxbias_general(a, dm, dgp.c_true)
                sd = dgp.sigma0 * float(np.linalg.norm(a))
                half = z * sd
            else:
                raise ConfigError(f"unknown estimator '{name}'")
        except NumericalError:
            entries[name] = None
            continue
        entries[name] = {"weights": a, "maxbias": mb, "sd": sd, "half": half}
    return entries


def _oracle_chunk(dgp: FixedDgp, entries: dict, master_seed: int, rep_ids) -> dict:
    names = [n for n, e in entries.items() if e is not None]
    betas = {n: np.empty(len(rep_ids)) for n in names}
    covered = {n: np.empty(len(rep_ids), dtype=bool) for n in names}
    for j, rep in enumerate(rep_ids):
        rng = np.random.default_rng(np.random.SeedSequence([master_seed, int(rep)]))
        y = dgp.mu + _draw_errors(dgp, rng)
        for n in names:
            e = entries[n]
            b = float(e["weights"] @ y)
            betas[n][j] = b
            covered[n][j] = abs(b - dgp.beta_target) <= e["half"]
    return {"betas": betas, "covered": covered}


def simulate(
    spec: DgpSpec,
    reps: int,
    alpha: float = 0.05,
    estimators=DEFAULT_ESTIMATORS,
    mode: str = "oracle",
    master_seed: int = 0,
    trim_c: float = DEFAULT_TRIM_C,
    threads: int | None = None,
) -> McResult:
    """Run the replication study and aggregate coverage/length metrics.

    ``mode="oracle"`` gives the frontier estimator the true heterogeneity
    magnitude and error scale (fixed weights and interval length across
    replications); ``mode="feasible"`` runs the full data-driven pipeline
    each replication. Estimators that are infeasible on the design are
    recorded as such rather than failing the study.

    Parameters
    ----------
    spec : DgpSpec
        Fixed design plus effect structure and error law.
    reps : int
        Number of error redraws.
    alpha : float
        Nominal one minus coverage for every interval.
    estimators : sequence of str
        Subset of {"regulate", "short", "short_bc", "long", "trimmed"}.
    mode : {"oracle", "feasible"}
    master_seed : int
        Root of the per-replication generator streams; results are
        reproducible from (spec, reps, master_seed) alone.
    trim_c : float
        Trimming threshold on p(1-p) for the trimmed estimator.
    threads : int, optional
        Worker processes; defaults to the REGULATE_THREADS environment
        variable. The worker count never changes the results.

    Returns
    -------
    McResult
        Per-estimator worst-case bias, mean estimated sd, MC sd of the
        estimates, mean interval length, length ratio against the frontier
        estimator, and empirical coverage.
    """
    if reps < 1:
        raise ConfigError("reps must be positive")
    if mode not in ("oracle", "feasible"):
        raise ConfigError(f"unknown mode '{mode}'")
    dgp = build_dgp(spec)
    n_workers = _threads(threads)

    if mode == "oracle":
        entries = _oracle_payload(dgp, estimators, alpha, trim_c)
        rep_ids = np.arange(reps)
        if n_workers > 1 and reps >= 2 * n_workers:
            chunks = np.array_split(rep_ids, n_workers)
            with ProcessPoolExecutor(max_workers=n_workers) as pool:
                parts = list(
                    pool.map(
                        _oracle_chunk_star,
                        [(dgp, entries, master_seed, c) for c in chunks],
                    )
                )
        else:
            parts = [_oracle_chunk(dgp, entries, master_seed, rep_ids)]
        per_est = {}
        for name in estimators:
            if entries.get(name) is None:
                per_est[name] = EstimatorMetrics(status="infeasible")
                continue
            betas = np.concatenate([p["betas"][name] for p in parts])
            covered = np.concatenate([p["covered"][name] for p in parts])
            e = entries[name]
            per_est[name] = EstimatorMetrics(
                status="ok",
                worst_case_bias=e["maxbias"],
                mean_sd=e["sd"],
                mc_sd=float(np.std(betas, ddof=1)) if reps > 1 else 0.0,
                mean_ci_length=2.0 * e["half"],
                ci_length_ratio=math.nan,
                coverage=float(np.mean(covered)),
            )
    else:
        per_est = _feasible_study(dgp, reps, alpha, estimators, master_seed, trim_c)

    ref = per_est.get("regulate")
    ref_len = ref.mean_ci_length if ref is not None and ref.status == "ok" else math.nan
    for name, m in list(per_est.items()):
        if m.status == "ok":
            per_est[name] = EstimatorMetrics(
                status="ok",
                worst_case_bias=m.worst_case_bias,
                mean_sd=m.mean_sd,
                mc_sd=m.mc_sd,
                mean_ci_length=m.mean_ci_length,
                ci_length_ratio=(
                    m.mean_ci_length / ref_len if ref_len and math.isfinite(ref_len) else math.nan
                ),
                coverage=m.coverage,
            )
    return McResult(
        per_estimator=per_est,
        reps=reps,
        master_seed=master_seed,
        alpha=alpha,
        mode=mode,
        beta_target=dgp.beta_target,
    )


def _oracle_chunk_star(args):
    return _oracle_chunk(*args)


def _feasible_study(dgp, reps, alpha, estimators, master_seed, trim_c):
    dm = dgp.dm
    z = cv_folded_normal(0.0, alpha)
    acc = {
        name: {"beta": [], "half": [], "sd": [], "covered": [], "fail": 0}
        for name in estimators
    }
    static_weights = {}
    for name in estimators:
        try:
            if name in ("short", "short_bc"):
                static_weights[name] = short_weights(dm)
            elif name == "long":
                static_weights[name] = long_weights(dm)
            elif name == "trimmed":
                static_weights[name], _ = trimmed_weights(dm, trim_c)
        except NumericalError:
            static_weights[name] = None

    for rep in range(reps):
        rng = np.random.default_rng(np.random.SeedSequence([master_seed, rep]))
        y = dgp.mu + _draw_errors(dgp, rng)
        init = initial_estimator(dm, y, mode="auto")
        for name in estimators:
            try:
                if name == "regulate":
                    rep_out = feasible_ci(
                        dm, y, c_bound=dgp.c_true, alpha=alpha, se_kind="robust",
                        init=init,
                    )
                    b, half, sd = rep_out.beta_hat, rep_out.half_length, rep_out.sd
                else:
                    a = static_weights.get(name)
                    if a is None:
                        acc[name]["fail"] += 1
                        continue
                    v = variance_robust(a, init.residuals, kind="robust")
                    sd = math.sqrt(v)
                    b = float(a @ y)
                    if name == "short_bc":
                        mb = bias_mod.maxbias_general(a, dm, dgp.c_true)
                        half = sd * cv_folded_normal(mb / sd, alpha)
                    else:
                        half = z * sd
                acc[name]["beta"].append(b)
                acc[name]["half"].append(half)
                acc[name]["sd"].append(sd)
                acc[name]["covered"].append(abs(b - dgp.beta_target) <= half)
            except (NumericalError, ConfigError):
                acc[name]["fail"] += 1
    per_est = {}
    for name in estimators:
        a = acc[name]
        if not a["beta"]:
            per_est[name] = EstimatorMetrics(status="infeasible")
            continue
        weights = static_weights.get(name)
        if name == "regulate" or weights is None:
            wcb = math.nan
        else:
            try:
                wcb = bias_mod.maxbias_general(weights, dm, dgp.c_true)
            except NumericalError:
                wcb = math.nan
        betas = np.asarray(a["beta"])
        per_est[name] = EstimatorMetrics(
            status="ok",
            worst_case_bias=wcb,
            mean_sd=float(np.mean(a["sd"])),
            mc_sd=float(np.std(betas, ddof=1)) if betas.size > 1 else 0.0,
            mean_ci_length=float(np.mean(a["half"])) * 2.0,
            ci_length_ratio=math.nan,
            coverage=float(np.mean(a["covered"])),
        )
    return per_est


# ----------------------------------------------------------------------------
# flat key=value configuration files
# ----------------------------------------------------------------------------

_LIST_KEYS = {"cell_sizes", "cell_propensities", "tau_values", "gamma", "estimators"}
_KNOWN_KEYS = _LIST_KEYS | {
    "input", "outcome", "treatment", "covariates", "discrete",
    "estimand", "ate", "c0", "direction", "sigma0", "error_law", "t_df",
    "reps", "alpha", "mode", "seed", "trim_c",
}


def parse_dgp_config(path) -> dict:
    """Parse a key=value DGP config file into a flat dict."""
    cfg: dict = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"config line {line_no}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _KNOWN_KEYS:
                raise ConfigError(f"config line {line_no}: unknown key '{key}'")
            cfg[key] = value
    return cfg


def spec_from_config(cfg: dict) -> tuple[DgpSpec, dict]:
    """Build a DgpSpec plus run controls (reps, alpha, mode, seed) from a config."""

    def floats(key):
        return tuple(float(v) for v in cfg[key].split(",")) if key in cfg else None

    dataset = None
    if "input" in cfg:
        from .dataset import ColumnSchema, load_csv, saturate

        covs = tuple(v.strip() for v in cfg.get("covariates", "").split(",") if v.strip())
        discrete = tuple(v.strip() for v in cfg.get("discrete", "").split(",") if v.strip())
        schema = ColumnSchema(
            outcome=cfg.get("outcome", "outcome"),
            treatment=cfg.get("treatment", "treatment"),
            covariates=covs,
            discrete=discrete,
        )
        dataset = load_csv(cfg["input"], schema)
        if discrete:
            dataset = saturate(dataset, discrete)

    sizes = cfg.get("cell_sizes")
    direction: object = cfg.get("direction", "worst_short")
    if isinstance(direction, str) and "," in direction:
        direction = tuple(float(v) for v in direction.split(","))
    spec = DgpSpec(
        cell_sizes=tuple(int(float(v)) for v in sizes.split(",")) if sizes else None,
        cell_propensities=floats("cell_propensities"),
        dataset=dataset,
        estimand=cfg.get("estimand", "ate"),
        tau_values=floats("tau_values"),
        ate=float(cfg["ate"]) if "ate" in cfg else None,
        c0=float(cfg["c0"]) if "c0" in cfg else None,
        direction=direction,
        gamma=floats("gamma"),
        sigma0=float(cfg.get("sigma0", "1.0")),
        error_law=cfg.get("error_law", "gaussian"),
        t_df=int(float(cfg.get("t_df", "5"))),
    )
    extras = {
        "reps": int(float(cfg["reps"])) if "reps" in cfg else None,
        "alpha": float(cfg.get("alpha", "0.05")),
        "mode": cfg.get("mode", "oracle"),
        "seed": int(float(cfg.get("seed", "0"))),
        "trim_c": float(cfg.get("trim_c", str(DEFAULT_TRIM_C))),
        "estimators": tuple(
            v.strip() for v in cfg.get("estimators", ",".join(DEFAULT_ESTIMATORS)).split(",")
            if v.strip()
        ),
    }
    return spec, extras


def result_rows(result: McResult) -> list[dict]:
    """Flatten an McResult into one row per estimator (fixed column order)."""
    rows = []
    for name, m in result.per_estimator.items():
        rows.append(
            {
                "estimator": name,
                "status": m.status,
                "worst_case_bias": m.worst_case_bias,
                "mean_sd": m.mean_sd,
                "mc_sd": m.mc_sd,
                "mean_ci_length": m.mean_ci_length,
                "ci_length_ratio": m.ci_length_ratio,
                "coverage": m.coverage,
                "reps": result.reps,
                "master_seed": result.master_seed,
            }
        )
    return rows
