import math

import numpy as np
import pytest
from scipy.stats import norm

from regulate import (
    Dataset,
    build_design,
    cv_folded_normal,
    feasible_ci,
    initial_estimator,
    optimize_lambda,
    variance_robust,
)
from regulate.baselines import long_weights, short_weights
from regulate.errors import ConfigError, DataError, NumericalError
from regulate.inference import REPORT_FIELDS, half_length, lindeberg_weight
from regulate.ridge import default_lambda_grid, fit_at
from regulate.bias import maxbias_fit, maxbias_general
from oracles import foldnorm_cv
from support import draw_y, make_cells_dataset, mean_response, random_delta, random_design


class TestFoldedNormalCv:
    def test_zero_bias_standard_quantile(self):
        assert cv_folded_normal(0.0, 0.05) == pytest.approx(1.959964, abs=1e-4)

    def test_bias_three(self):
        assert cv_folded_normal(3.0, 0.05) == pytest.approx(4.6449, abs=1e-3)

    def test_large_bias_one_sided_limit(self):
        assert cv_folded_normal(10.0, 0.05) - 10.0 == pytest.approx(1.6449, abs=1e-3)

    def test_matches_scipy_quantile(self):
        for b in [0.0, 0.3, 1.1, 2.7, 5.0]:
            for alpha in [0.01, 0.05, 0.2]:
                assert cv_folded_normal(b, alpha) == pytest.approx(
                    foldnorm_cv(b, alpha), abs=1e-7
                )

    def test_strictly_monotone_in_bias(self):
        grid = np.linspace(0.0, 8.0, 100)
        vals = [cv_folded_normal(b, 0.05) for b in grid]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_monotone_in_confidence(self):
        vals = [cv_folded_normal(1.0, a) for a in (0.2, 0.1, 0.05, 0.01)]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_lower_bounds(self):
        z95 = norm.ppf(0.95)
        z975 = norm.ppf(0.975)
        for b in [3.0, 4.0, 6.0, 9.0]:
            c = cv_folded_normal(b, 0.05)
            assert c >= max(z975, b + z95 - 1e-3)

    def test_validation(self):
        with pytest.raises(ConfigError):
            cv_folded_normal(-0.1, 0.05)
        with pytest.raises(ConfigError):
            cv_folded_normal(1.0, 1.5)


class TestOptimizeLambda:
    def test_zero_bound_short_circuits(self):
        rng = np.random.default_rng(0)
        dm = random_design(rng)
        lam, fit = optimize_lambda(dm, 0.0, sigma=1.0)
        assert math.isinf(lam)
        a_short = short_weights(dm)
        assert np.max(np.abs(fit.weights - a_short)) <= 1e-12

    def test_large_bound_approaches_long_ci(self):
        rng = np.random.default_rng(1)
        dm = random_design(rng, min_size=8)
        sigma = 1.0
        lam, fit = optimize_lambda(dm, 50.0, sigma)
        hl = sigma * fit.norm * cv_folded_normal(
            maxbias_fit(fit, dm, 50.0) / (sigma * fit.norm), 0.05
        )
        hl_long = sigma * np.linalg.norm(long_weights(dm)) * norm.ppf(0.975)
        assert hl <= hl_long * 1.01

    def test_minimum_over_grid(self):
        rng = np.random.default_rng(2)
        dm = random_design(rng)
        sigma, c = 1.0, 0.8
        lam, fit = optimize_lambda(dm, c, sigma)
        sd = sigma * fit.norm
        best = half_length(maxbias_fit(fit, dm, c), sd, 0.05)
        for lam_g in default_lambda_grid(dm):
            f = fit_at(dm, lam_g, diagnostics=False)
            sd_g = sigma * f.norm
            assert best <= half_length(maxbias_fit(f, dm, c), sd_g, 0.05) + 1e-12

    def test_needs_positive_sigma(self):
        rng = np.random.default_rng(3)
        dm = random_design(rng)
        with pytest.raises(NumericalError):
            optimize_lambda(dm, 1.0, sigma=0.0)


class TestInitialEstimator:
    def test_noiseless_long_model(self):
        rng = np.random.default_rng(4)
        dm = random_design(rng)
        y = mean_response(dm, 1.0, rng.standard_normal(dm.p), random_delta(rng, dm, 0.5))
        init = initial_estimator(dm, y, mode="long")
        assert init.sigma2 <= 1e-16 * max(np.var(y), 1e-12)

    def test_long_mode_fails_without_overlap(self):
        rng = np.random.default_rng(5)
        ds = make_cells_dataset(rng, 3, no_overlap_cells=1)
        dm = build_design(ds, "ate")
        with pytest.raises(NumericalError, match="cv_ridge"):
            initial_estimator(dm, mode="long")
        # auto falls back
        init = initial_estimator(dm, draw_y(rng, dm), mode="auto")
        assert init.mode == "cv_ridge"

    def test_sigma_recovery_across_reps(self):
        rng = np.random.default_rng(6)
        ds = make_cells_dataset(rng, 4, min_size=120, max_size=130)
        dm = build_design(ds, "ate")
        sigma = 1.7
        hits = 0
        reps = 200
        for _ in range(reps):
            y = draw_y(rng, dm, delta=random_delta(rng, dm, 0.4), sigma=sigma)
            init = initial_estimator(dm, y, mode="long")
            if abs(init.sigma2 - sigma**2) <= 0.15 * sigma**2:
                hits += 1
        assert hits >= 0.90 * reps


class TestVarianceRobust:
    def test_equal_residuals_algebra(self):
        rng = np.random.default_rng(7)
        dm = random_design(rng)
        a = short_weights(dm)
        r = 0.37
        v = variance_robust(a, np.full(dm.n, r), kind="robust")
        assert v == pytest.approx(r**2 * float(a @ a), rel=1e-12)

    def test_singleton_clusters_reduce_to_robust(self):
        rng = np.random.default_rng(8)
        dm = random_design(rng)
        a = short_weights(dm)
        eps = rng.standard_normal(dm.n)
        v_r = variance_robust(a, eps, kind="robust")
        v_c = variance_robust(a, eps, cluster_id=np.arange(dm.n), kind="cluster")
        assert v_c == pytest.approx(v_r, rel=1e-12)

    def test_single_cluster_rejected(self):
        rng = np.random.default_rng(9)
        dm = random_design(rng)
        with pytest.raises(DataError, match=">=2 clusters"):
            variance_robust(
                short_weights(dm), np.ones(dm.n), cluster_id=np.zeros(dm.n), kind="cluster"
            )

    def test_homoskedastic_calibration(self):
        rng = np.random.default_rng(10)
        ds = make_cells_dataset(rng, 4, min_size=120, max_size=130)
        dm = build_design(ds, "ate")
        a = short_weights(dm)
        sigma = 1.0
        target = sigma**2 * float(a @ a)
        inside = 0
        reps = 500
        for _ in range(reps):
            y = draw_y(rng, dm, sigma=sigma)
            init = initial_estimator(dm, y, mode="long")
            ratio = variance_robust(a, init.residuals, kind="robust") / target
            if 0.8 <= ratio <= 1.25:
                inside += 1
        assert inside >= 0.95 * reps


class TestFeasibleCi:
    def test_zero_bound_equals_classic_short_ci(self):
        rng = np.random.default_rng(11)
        dm = random_design(rng)
        y = draw_y(rng, dm)
        report = feasible_ci(dm, y, c_bound=0.0, se_kind="robust")
        init = initial_estimator(dm, y)
        a = short_weights(dm)
        sd = math.sqrt(variance_robust(a, init.residuals, kind="robust"))
        z = norm.ppf(0.975)
        assert report.beta_hat == pytest.approx(float(a @ y), rel=1e-12)
        assert report.half_length == pytest.approx(z * sd, rel=1e-9)

    def test_report_invariants(self):
        rng = np.random.default_rng(12)
        dm = random_design(rng)
        y = draw_y(rng, dm, delta=random_delta(rng, dm, 0.4))
        report = feasible_ci(dm, y, c_bound=0.5, se_kind="homo")
        lo, hi = report.ci
        assert lo <= report.beta_hat <= hi
        assert report.half_length >= norm.ppf(1 - report.alpha / 2) * report.sd - 1e-12
        row = report.to_row()
        assert tuple(row.keys()) == REPORT_FIELDS

    def test_lindeberg_warning_fires_on_dominant_weight(self):
        ds = Dataset(
            outcome=[1.0, 0.0, 0.5, 0.25],
            treatment=[1, 0, 0, 0],
            covariates=np.zeros((4, 0)),
            covariate_names=(),
            covariate_kinds=(),
        )
        dm = build_design(ds, "ate")
        with pytest.warns(UserWarning, match="weight share"):
            feasible_ci(dm, c_bound=0.0, se_kind="homo")

    def test_coverage_under_worst_case_boundary(self):
        # fixed design, known sigma, deviations on the ellipsoid boundary in the
        # least favorable direction for the chosen weights
        rng = np.random.default_rng(13)
        ds = make_cells_dataset(rng, 4, min_size=25, max_size=30, p_range=(0.15, 0.85))
        dm = build_design(ds, "ate")
        sigma, c, alpha = 1.0, 0.6, 0.05
        lam, fit = optimize_lambda(dm, c, sigma, alpha)
        from regulate.simlab import make_worstcase_delta

        delta = make_worstcase_delta(dm, c, weights=fit.weights)
        mb = maxbias_general(fit.weights, dm, c)
        sd = sigma * fit.norm
        half = half_length(mb, sd, alpha)
        mu = mean_response(dm, 1.0, np.zeros(dm.p), delta)
        reps, covered = 600, 0
        for _ in range(reps):
            y = mu + sigma * rng.standard_normal(dm.n)
            covered += abs(float(fit.weights @ y) - 1.0) <= half
        mc_err = math.sqrt(alpha * (1 - alpha) / reps)
        assert covered / reps >= 1 - alpha - 2 * mc_err

    def test_lindeberg_weight_definition(self):
        a = np.array([3.0, 1.0, 1.0, 1.0])
        assert lindeberg_weight(a) == pytest.approx(9.0 / 12.0)
