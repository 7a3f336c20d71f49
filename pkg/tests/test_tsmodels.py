import csv
import math

import numpy as np
import pytest

from fegan.errors import PeriodTooSmall, TooShort
from fegan.ingest import ContextTargetPair
from fegan.tsmodels import (
    DEFAULT_GRID,
    ArmaModel,
    ArmaSpec,
    FeatureConfig,
    GbmParams,
    arma_fit,
    arma_forecast,
    arma_simulate,
    css_loglik,
    decompose,
    gbm_estimate,
    gbm_simulate,
    generate_feature,
    hybrid_generate,
    information_criteria,
    is_invertible,
    is_stationary,
    psi_weights,
    select_arma,
)


def model(phi=(), theta=(), intercept=0.0, sigma2=1.0, loglik=0.0, n=100):
    spec = ArmaSpec(len(phi), len(theta))
    return ArmaModel(spec, np.array(phi, float), np.array(theta, float), intercept, sigma2,
                     loglik, n)


class TestGbm:
    def test_zeros(self):
        p = gbm_estimate(np.zeros(30))
        assert p.sigma == 0.0 and p.log_mean == 0.0

    def test_alternating(self):
        n, c = 1000, 0.3
        p = gbm_estimate(np.tile([-c, c], n // 2))
        assert p.log_mean == pytest.approx(0.0, abs=1e-15)
        assert p.sigma == pytest.approx(c * math.sqrt(n / (n - 1)), rel=1e-12)

    def test_recovers_moments(self):
        x = np.random.default_rng(0).normal(0.001, 0.02, 5000)
        p = gbm_estimate(x)
        assert abs(p.log_mean - 0.001) < 3 * 0.02 / math.sqrt(5000)
        assert abs(p.sigma - 0.02) < 3 * 0.02 / math.sqrt(2 * 4999)

    def test_too_short(self):
        with pytest.raises(TooShort):
            gbm_estimate([0.1])

    def test_simulate_degenerate(self):
        p = GbmParams(mu=0.004, sigma=0.0)
        np.testing.assert_array_equal(gbm_simulate(p, 25, np.random.default_rng(1)), 0.004)

    def test_simulate_seeded(self):
        p = GbmParams(0.01, 0.2)
        a = gbm_simulate(p, 50, np.random.default_rng(9))
        b = gbm_simulate(p, 50, np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)

    def test_simulate_moments(self):
        p = GbmParams(0.05, 0.3)
        x = gbm_simulate(p, 100_000, np.random.default_rng(2))
        m = p.mu - p.sigma ** 2 / 2
        assert abs(x.mean() - m) < 4 * p.sigma / math.sqrt(1e5)
        # var of the sample variance is about 2 sigma^4 / n
        assert abs(x.var() - p.sigma ** 2) < 4 * p.sigma ** 2 * math.sqrt(2 / 1e5)

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            GbmParams(0.0, -1.0)


class TestSpec:
    def test_names_round_trip(self):
        for spec in DEFAULT_GRID:
            assert ArmaSpec.parse(spec.name) == spec
        assert [s.name for s in DEFAULT_GRID[:4]] == ["AR(1)", "AR(2)", "AR(3)", "MA(1)"]

    def test_invalid(self):
        with pytest.raises(ValueError):
            ArmaSpec(0, 0)
        with pytest.raises(ValueError):
            ArmaSpec(4, 0)

    def test_stability_matches_roots(self):
        rng = np.random.default_rng(3)
        for _ in range(2000):
            k = rng.integers(1, 4)
            c = rng.uniform(-2, 2, k)
            roots = np.roots(np.r_[-c[::-1], 1.0])
            assert is_stationary(c) == bool(np.all(np.abs(roots) > 1))
            roots = np.roots(np.r_[c[::-1], 1.0])
            assert is_invertible(c) == bool(np.all(np.abs(roots) > 1))


def loglik_loop(x, phi, theta, c):
    """Conditional Gaussian log-likelihood written out step by step."""
    p, q = len(phi), len(theta)
    e = []
    for t in range(p, len(x)):
        v = x[t] - c
        for i in range(p):
            v -= phi[i] * x[t - 1 - i]
        for j in range(q):
            if len(e) - 1 - j >= 0:
                v -= theta[j] * e[len(e) - 1 - j]
        e.append(v)
    e = np.array(e)
    s2 = float(e @ e) / len(e)
    return -0.5 * len(e) * (math.log(2 * math.pi * s2) + 1)


def hessian(f, x0, h=1e-4):
    k = len(x0)
    H = np.zeros((k, k))
    for i in range(k):
        for j in range(k):
            def at(di, dj):
                x = np.array(x0, float)
                x[i] += di
                x[j] += dj
                return f(x)
            H[i, j] = (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4 * h * h)
    return H


class TestArmaFit:
    def test_white_noise(self):
        x = np.random.default_rng(4).standard_normal(2000)
        assert abs(arma_fit(x, ArmaSpec(1, 0)).phi[0]) < 0.08

    def test_ar1_against_regression(self):
        x = arma_simulate([0.7], [], 2000, np.random.default_rng(5))
        m = arma_fit(x, ArmaSpec(1, 0))
        design = np.column_stack([np.ones(1999), x[:-1]])
        beta = np.linalg.lstsq(design, x[1:], rcond=None)[0]
        assert 0.6 <= m.phi[0] <= 0.8
        # conditional MLE of an AR(1) is the lag-1 regression
        assert m.phi[0] == pytest.approx(beta[1], abs=1e-5)
        assert m.intercept == pytest.approx(beta[0], abs=1e-5)

    def test_ma1(self):
        x = arma_simulate([], [0.5], 2000, np.random.default_rng(6))
        m = arma_fit(x, ArmaSpec(0, 1))
        assert 0.4 <= m.theta[0] <= 0.6
        assert m.loglik == pytest.approx(loglik_loop(x, [], m.theta, m.intercept), abs=1e-8)

    def test_loglik_matches_loop(self):
        x = arma_simulate([0.5, -0.3], [0.4], 300, np.random.default_rng(7))
        phi, theta, c = np.array([0.4, -0.2]), np.array([0.3]), 0.05
        ll, _ = css_loglik(x, phi, theta, c)
        assert ll == pytest.approx(loglik_loop(x, phi, theta, c), abs=1e-9)

    def test_fit_is_stationary(self):
        x = np.cumsum(np.random.default_rng(8).standard_normal(400))  # random walk
        m = arma_fit(x, ArmaSpec(1, 0))
        assert is_stationary(m.phi)
        assert m.sigma2 > 0

    def test_too_short(self):
        with pytest.raises(TooShort):
            arma_fit(np.zeros(39), ArmaSpec(2, 1))

    @pytest.mark.parametrize("phi,theta", [([0.7], []), ([], [0.5]), ([0.5, -0.3], [0.4])])
    def test_recovery_within_three_se(self, phi, theta):
        spec = ArmaSpec(len(phi), len(theta))
        truth = np.r_[phi, theta]
        hits = 0
        for seed in range(100):
            x = arma_simulate(phi, theta, 2000, np.random.default_rng(1000 + seed))
            m = arma_fit(x, spec)
            est = np.r_[m.intercept, m.phi, m.theta]

            def nll(v):
                return -css_loglik(x, v[1:1 + spec.p], v[1 + spec.p:], v[0])[0]

            cov = np.linalg.inv(hessian(nll, est))
            se = np.sqrt(np.diag(cov))[1:]
            hits += bool(np.all(np.abs(est[1:] - truth) <= 3 * se))
        assert hits >= 95


class TestCriteria:
    def test_plug_in(self):
        aic, bic = information_criteria(model(phi=[0.1], loglik=0.0, n=100))
        assert aic == 6.0  # k = 3
        assert bic == pytest.approx(3 * math.log(100), abs=1e-12)

    def test_k_counts_intercept_and_variance(self):
        aic, _ = information_criteria(model(phi=[0.1, 0.1], theta=[0.2], loglik=-10.0))
        assert aic == 2 * 5 + 20

    def test_aic_below_bic_from_eight(self):
        for n in range(2, 30):
            aic, bic = information_criteria(model(phi=[0.2], loglik=-3.0, n=n))
            assert (aic < bic) == (n >= 8)

    def test_monotone_in_loglik(self):
        lo = information_criteria(model(phi=[0.2], loglik=-5.0))
        hi = information_criteria(model(phi=[0.2], loglik=-4.0))
        assert hi[0] < lo[0] and hi[1] < lo[1]


class TestSelection:
    def test_singleton_grid(self):
        x = np.random.default_rng(9).standard_normal(600)
        table, winner = select_arma(x, [ArmaSpec(1, 0)])
        assert winner == ArmaSpec(1, 0)
        assert len(table.rows) == 3

    def test_table_shape_and_means(self, tmp_path):
        x = arma_simulate([0.5, -0.3], [0.4], 1050, np.random.default_rng(10))
        table, winner = select_arma(x, DEFAULT_GRID, 500, 50)
        assert len(table.rows) == 120
        assert sorted({r["window_start"] for r in table.rows}) == list(range(0, 551, 50))
        # recompute mean AIC from the per-cell log-likelihoods
        means = {}
        for spec in DEFAULT_GRID:
            k = spec.p + spec.q + 2
            vals = [2 * k - 2 * r["loglik"] for r in table.rows if r["spec"] == spec]
            means[spec] = np.mean(vals)
        assert winner == min(DEFAULT_GRID, key=lambda s: (means[s], s.p + s.q))
        for spec, m in table.mean_aic().items():
            assert m == pytest.approx(means[spec], abs=1e-9)
        path = tmp_path / "sel.csv"
        table.to_csv(path)
        with path.open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["spec", "window_start", "window_end", "aic", "bic"]
        assert len(rows) == 121

    def test_too_short(self):
        with pytest.raises(TooShort):
            select_arma(np.zeros(100), DEFAULT_GRID, 500, 50)


class TestForecast:
    def test_geometric_decay(self):
        mean, _ = arma_forecast(model(phi=[0.5]), [3.0, 1.0], 5)
        np.testing.assert_allclose(mean, [0.5, 0.25, 0.125, 0.0625, 0.03125], atol=1e-15)

    def test_variance_identities(self):
        _, hw = arma_forecast(model(phi=[0.6], sigma2=2.0), [0.0, 1.0], 3)
        var = (hw / 1.96) ** 2
        assert var[0] == pytest.approx(2.0, rel=1e-12)
        assert var[1] == pytest.approx(2.0 * (1 + 0.36), rel=1e-12)

    def test_psi_weights(self):
        # ARMA(1,1): psi_j = (phi + theta) phi^(j-1)
        psi = psi_weights([0.5], [0.3], 5)
        np.testing.assert_allclose(psi, [1, 0.8, 0.4, 0.2, 0.1], atol=1e-15)

    def test_converges_to_mean(self):
        m = model(phi=[0.5, -0.3], theta=[0.4], intercept=0.2)
        mean, hw = arma_forecast(m, np.random.default_rng(11).normal(size=50), 500)
        assert mean[-1] == pytest.approx(0.2 / (1 - 0.2), abs=1e-6)
        assert np.all(np.diff(hw) >= 0)

    def test_ma_uses_residuals(self):
        # MA(1) one-step forecast is c + theta * last residual
        x = np.array([0.3, -0.2, 0.5, 0.1])
        m = model(theta=[0.6], intercept=0.1)
        e = 0.0
        for v in x:
            e = v - 0.1 - 0.6 * e
        mean, _ = arma_forecast(m, x, 2)
        assert mean[0] == pytest.approx(0.1 + 0.6 * e, abs=1e-14)
        assert mean[1] == pytest.approx(0.1, abs=1e-14)

    def test_history_too_short(self):
        with pytest.raises(TooShort):
            arma_forecast(model(phi=[0.1, 0.1]), [1.0], 3)


class TestDecompose:
    @pytest.mark.parametrize("P", [4, 5, 20])
    def test_ramp(self, P):
        x = 0.3 * np.arange(120) + 2.0
        d = decompose(x, P)
        np.testing.assert_allclose(d.seasonal, 0.0, atol=1e-9)
        np.testing.assert_allclose(d.trend[d.interior], x[d.interior], atol=1e-9)

    @pytest.mark.parametrize("P", [6, 7, 20])
    def test_ramp_plus_sine(self, P):
        t = np.arange(10 * P)
        season = np.sin(2 * np.pi * t / P)
        d = decompose(0.05 * t + season, P)
        np.testing.assert_allclose(d.seasonal[d.interior], season[d.interior], atol=1e-6)

    def test_identity_and_zero_mean(self):
        x = np.random.default_rng(12).normal(size=97)
        d = decompose(x, 8)
        np.testing.assert_allclose(d.trend + d.seasonal + d.residual, x, atol=1e-12, rtol=0)
        assert abs(d.seasonal[:8].mean()) < 1e-9
        assert np.all(d.residual[:4] == 0) and np.all(d.residual[-4:] == 0)

    def test_errors(self):
        with pytest.raises(PeriodTooSmall):
            decompose(np.zeros(10), 1)
        with pytest.raises(TooShort):
            decompose(np.zeros(39), 20)


class TestHybrid:
    m = model(phi=[0.5, -0.3], theta=[0.4], intercept=0.01, sigma2=0.04)

    def test_zero_sigma(self):
        hist = np.random.default_rng(13).normal(size=60)
        out = hybrid_generate(self.m, hist, 0.0, 100, 20, np.random.default_rng(0))
        mean, _ = arma_forecast(self.m, hist, 100)
        d = decompose(mean, 20)
        np.testing.assert_array_equal(out, d.trend + d.seasonal)

    def test_seeded(self):
        hist = np.zeros(10)
        a = hybrid_generate(self.m, hist, 0.2, 60, 20, np.random.default_rng(5))
        b = hybrid_generate(self.m, hist, 0.2, 60, 20, np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)

    def test_noise_scale(self):
        hist = np.random.default_rng(14).normal(size=60)
        out = hybrid_generate(self.m, hist, 0.3, 10_000, 20, np.random.default_rng(6))
        d = decompose(arma_forecast(self.m, hist, 10_000)[0], 20)
        assert abs(np.std(out - d.trend - d.seasonal) / 0.3 - 1) < 0.05


class TestGenerateFeature:
    def pair(self, context, T=5):
        return ContextTargetPair(np.asarray(context, float), np.zeros(T), 0)

    def test_historical(self):
        ctx = np.arange(5.0)
        out = generate_feature("Historical", self.pair(ctx), FeatureConfig(T=5),
                               np.random.default_rng())
        np.testing.assert_array_equal(out, ctx)

    def test_none(self):
        out = generate_feature("None", self.pair(np.ones(5)), FeatureConfig(T=5),
                               np.random.default_rng())
        assert out.size == 0

    def test_gbm_zero_context(self):
        out = generate_feature("Gbm", self.pair(np.zeros(5)), FeatureConfig(T=5),
                               np.random.default_rng(0))
        np.testing.assert_array_equal(out, np.zeros(5))

    def test_arma_is_forecast(self):
        ctx = arma_simulate([0.5, -0.3], [0.4], 200, np.random.default_rng(15))
        cfg = FeatureConfig(T=50)
        out = generate_feature("Arma", self.pair(ctx, 50), cfg, np.random.default_rng())
        fit = arma_fit(ctx, ArmaSpec(2, 1))
        np.testing.assert_array_equal(out, arma_forecast(fit, ctx, 50)[0])

    def test_hybrid_length(self):
        ctx = arma_simulate([0.5], [], 200, np.random.default_rng(16))
        out = generate_feature("Hybrid", self.pair(ctx, 60), FeatureConfig(T=60),
                               np.random.default_rng(1))
        assert out.shape == (60,)

    def test_unknown(self):
        with pytest.raises(ValueError):
            generate_feature("Lstm", self.pair(np.ones(5)), FeatureConfig(T=5),
                             np.random.default_rng())
