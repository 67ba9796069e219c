"""Cross-cutting checks: penalty path export, figures, bundled configs."""

import math

import numpy as np
import pandas as pd
import pytest
from scipy.stats import norm

import regulate
from regulate import HeterogeneityBound, build_design, lambda_path, optimize_lambda
from regulate.baselines import long_weights
from regulate.bias import maxbias_fit
from regulate.inference import half_length
from regulate.plots import lambda_path_figure, sensitivity_figure
from regulate.ridge import lambda_path_csv
from regulate.simlab import parse_dgp_config, simulate, spec_from_config
from regulate.vcate import sensitivity, vcate_plugin
from support import draw_y, make_cells_dataset, mean_response, random_design


class TestLambdaPath:
    def test_rows_cover_grid_and_endpoint(self):
        rng = np.random.default_rng(0)
        dm = random_design(rng)
        rows = lambda_path(dm, 0.5, 1.0)
        assert math.isinf(rows[-1]["lam"])
        sds = [r["sd"] for r in rows]
        biases = [r["maxbias"] for r in rows]
        assert all(b >= a - 1e-12 for a, b in zip(biases, biases[1:]))
        assert all(a >= b - 1e-12 for a, b in zip(sds, sds[1:]))

    def test_csv_dump(self, tmp_path):
        rng = np.random.default_rng(1)
        dm = random_design(rng)
        out = tmp_path / "path.csv"
        lambda_path_csv(dm, 0.5, 1.0, out)
        table = pd.read_csv(out)
        assert list(table.columns) == ["lam", "sd", "maxbias", "beta_hat"]
        assert len(table) >= 40

    def test_small_bound_beats_interaction_full_ci(self):
        # mild heterogeneity lets the penalty undercut the unbiased regression
        rng = np.random.default_rng(2)
        dm = random_design(rng, min_size=10, p_range=(0.15, 0.85))
        sigma, c = 1.0, 0.02
        lam, fit = optimize_lambda(dm, c, sigma)
        best = half_length(maxbias_fit(fit, dm, c), sigma * fit.norm, 0.05)
        hl_long = norm.ppf(0.975) * sigma * float(np.linalg.norm(long_weights(dm)))
        assert best < hl_long


class TestFigures:
    def test_lambda_path_figure(self, tmp_path):
        rng = np.random.default_rng(3)
        dm = random_design(rng)
        rows = lambda_path(dm, 0.5, 1.0)
        out = tmp_path / "path.png"
        lambda_path_figure(rows, out)
        assert out.stat().st_size > 0

    def test_sensitivity_figure_deterministic(self, tmp_path):
        rng = np.random.default_rng(4)
        dm = random_design(rng)
        y = draw_y(rng, dm)
        curve = sensitivity(dm, y, c_grid=(0.0, 0.1, 0.2), se_kind="robust")
        a, b = tmp_path / "a.png", tmp_path / "b.png"
        sensitivity_figure(curve, a)
        sensitivity_figure(curve, b)
        assert a.read_bytes() == b.read_bytes()


class TestHeterogeneityBound:
    def test_validation(self):
        assert HeterogeneityBound(0.0).c == 0.0
        with pytest.raises(ValueError):
            HeterogeneityBound(-0.5)


class TestVcateAnalyticTrace:
    def test_plugin_bias_equals_trace_under_known_sigma(self):
        # under no heterogeneity the plug-in mean is the trace of the
        # coefficient noise, computable analytically for homoskedastic errors
        rng = np.random.default_rng(5)
        ds = make_cells_dataset(rng, 4, min_size=30, max_size=30, p_range=(0.3, 0.7))
        dm = build_design(ds, "ate")
        w = np.column_stack([dm.d[:, None], dm.x, dm.dxt])
        cov_theta = np.linalg.inv(w.T @ w)  # sigma = 1
        analytic = float(np.trace(dm.vx @ cov_theta[-dm.k:, -dm.k:]))
        reps = 600
        vals = np.empty(reps)
        for r in range(reps):
            rep_rng = np.random.default_rng(np.random.SeedSequence([55, r]))
            y = mean_response(dm, 1.0, np.zeros(dm.p), np.zeros(dm.k))
            vals[r] = vcate_plugin(dm, y + rep_rng.standard_normal(dm.n))
        se = vals.std(ddof=1) / math.sqrt(reps)
        assert abs(vals.mean() - analytic) <= 3 * se


class TestBundledConfigs:
    @pytest.fixture(scope="class")
    def results(self):
        out = {}
        for name in ("dgp1", "dgp2", "dgp3"):
            cfg = parse_dgp_config(f"configs/{name}.cfg")
            spec, extras = spec_from_config(cfg)
            out[name] = simulate(
                spec, reps=400, mode="oracle", master_seed=extras["seed"]
            ).per_estimator
        return out

    def test_dgp1_biased_short_undercovers(self, results):
        r = results["dgp1"]
        assert r["short"].coverage < 0.90
        assert r["regulate"].coverage >= 0.94
        assert r["short_bc"].ci_length_ratio > 1.0

    def test_dgp2_penalty_shortens_interval(self, results):
        r = results["dgp2"]
        assert r["long"].ci_length_ratio > 1.0
        assert r["regulate"].coverage >= 0.94

    def test_dgp3_no_overlap_pattern(self, results):
        r = results["dgp3"]
        assert r["long"].status == "infeasible"
        assert r["trimmed"].coverage < 0.90
        assert r["regulate"].coverage >= 0.94


class TestFromDatasetConfig:
    def test_design_taken_from_csv(self, tmp_path):
        rng = np.random.default_rng(6)
        ds = make_cells_dataset(rng, 3, min_size=12)
        frame = pd.DataFrame(
            {"y": np.zeros(ds.n), "d": ds.treatment, "cell": ds.cell_id}
        )
        data = tmp_path / "base.csv"
        frame.to_csv(data, index=False)
        cfg = tmp_path / "dgp.cfg"
        cfg.write_text(
            f"input = {data}\noutcome = y\ntreatment = d\n"
            "covariates = cell\ndiscrete = cell\n"
            "ate = 1.0\nc0 = 0.2\nsigma0 = 0.5\n"
        )
        spec, _ = spec_from_config(parse_dgp_config(cfg))
        result = simulate(spec, reps=50, master_seed=9)
        assert result.per_estimator["regulate"].status == "ok"
        assert result.beta_target == pytest.approx(1.0)
