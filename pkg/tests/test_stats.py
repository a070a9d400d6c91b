import numpy as np
import pytest
from scipy import stats as sps

from noisebench.belief import GaussianBelief
from noisebench.stats import (
    CalibrationBlock,
    DegenerateSampleError,
    TestResult,
    bh_fdr,
    chi2_cdf,
    coverage,
    coverage_marginal,
    crps_ensemble,
    crps_gaussian,
    ks_test,
    mahalanobis_suite,
    mse,
    normal_cdf,
    normal_quantile,
    pit,
    pit_histogram,
    shapiro_wilk,
    sw_pass_rate,
    wilson_interval,
)


def identity_belief(mu, lam):
    mu = np.asarray(mu, dtype=float)
    lam = np.asarray(lam, dtype=float)
    # mean of the transport is lam * t_y when the frame is the identity
    return GaussianBelief(t_y=mu / np.where(lam > 0, lam, 1.0), lambdas=lam,
                          hh_vectors=np.zeros((0, mu.size)))


class TestSpecialFunctions:
    def test_normal_cdf_symmetry(self):
        assert normal_cdf(0.0) == 0.5

    def test_normal_cdf_quantile(self):
        assert abs(normal_cdf(1.6449) - 0.95) < 1e-4

    def test_chi2_exponential_special_case(self):
        assert chi2_cdf(2.0 * np.log(2.0), 2) == pytest.approx(0.5, abs=1e-12)

    def test_chi2_matches_scipy(self):
        xs = np.linspace(0.0, 30.0, 50)
        for d in (1, 2, 5, 64):
            np.testing.assert_allclose(chi2_cdf(xs, d), sps.chi2(d).cdf(xs), atol=1e-8)

    def test_chi2_negative_rejected(self):
        with pytest.raises(ValueError):
            chi2_cdf(-0.5, 3)


class TestPit:
    def test_center_is_half(self):
        assert pit(1.0, 2.0, 1.0) == 0.5

    def test_quantile_point(self):
        assert pit(0.0, 1.0, 1.96) == pytest.approx(0.975, abs=1e-4)

    def test_zero_sigma_rejected(self):
        with pytest.raises(ValueError):
            pit(0.0, 0.0, 1.0)

    def test_calibrated_pit_uniform(self):
        rng = np.random.default_rng(0)
        y = rng.standard_normal(10_000) * 0.7 + 0.3
        u = pit(0.3, 0.7, y)
        assert ks_test(u, sps.uniform.cdf).p_value > 0.01

    def test_histogram_sums_to_count(self):
        u = np.random.default_rng(1).uniform(size=777)
        h = pit_histogram(u)
        assert h.sum() == 777 and h.shape == (20,)


class TestShapiroWilk:
    def test_affine_invariance_exact(self):
        x = np.random.default_rng(2).standard_normal(200)
        a = shapiro_wilk(x)
        # power-of-two scaling transforms the data without rounding, so the
        # statistic is bit-identical; a general affine map may wiggle by ulps
        assert shapiro_wilk(2.0 * x).statistic == a.statistic
        assert shapiro_wilk(0.25 * x).statistic == a.statistic
        b = shapiro_wilk(2.5 * x + 3.0)
        assert b.statistic == pytest.approx(a.statistic, abs=1e-12)

    def test_size_calibration(self):
        rng = np.random.default_rng(3)
        rejections = sum(shapiro_wilk(rng.standard_normal(100)).p_value < 0.05
                         for _ in range(2000))
        assert 0.035 <= rejections / 2000 <= 0.065

    def test_power_against_exponential(self):
        rng = np.random.default_rng(4)
        rejections = sum(shapiro_wilk(rng.exponential(size=100)).p_value < 0.05
                         for _ in range(200))
        assert rejections / 200 > 0.95

    def test_constant_sample_raises(self):
        with pytest.raises(DegenerateSampleError):
            shapiro_wilk(np.full(50, 2.0))

    def test_sample_size_limits(self):
        with pytest.raises(ValueError):
            shapiro_wilk(np.array([1.0, 2.0]))
        with pytest.raises(ValueError):
            shapiro_wilk(np.random.default_rng(5).standard_normal(5001))


class TestBhFdr:
    def test_worked_example(self):
        mask = bh_fdr([0.01, 0.02, 0.03, 0.5], q=0.05)
        np.testing.assert_array_equal(mask, [True, True, True, False])

    def test_all_ones_reject_none(self):
        assert not bh_fdr(np.ones(10), q=0.05).any()

    def test_single_p_plain_alpha(self):
        assert bh_fdr([0.04], q=0.05)[0]
        assert not bh_fdr([0.06], q=0.05)[0]

    def test_between_bonferroni_and_uncorrected(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            p = rng.uniform(size=40) ** 2
            q = 0.05
            n_bh = bh_fdr(p, q).sum()
            n_plain = (p <= q).sum()
            n_bonf = (p <= q / p.size).sum()
            assert n_bonf <= n_bh <= n_plain

    def test_input_order_preserved(self):
        mask = bh_fdr([0.5, 0.001, 0.9], q=0.05)
        np.testing.assert_array_equal(mask, [False, True, False])


class TestCoverage:
    def test_calibrated_oracle_rate(self):
        rng = np.random.default_rng(7)
        n = 10_000
        y = 1.5 * rng.standard_normal(n)
        rate = coverage_marginal(np.zeros(n), np.full(n, 1.5), y, 0.5)
        assert abs(rate - 0.5) < 0.015

    def test_half_sigma_undercoverage(self):
        rng = np.random.default_rng(8)
        n = 200_000
        y = rng.standard_normal(n)
        rate = coverage_marginal(np.zeros(n), np.full(n, 0.5), y, 0.9)
        analytic = 2.0 * normal_cdf(1.6449 * 0.5) - 1.0
        assert rate == pytest.approx(analytic, abs=0.005)
        assert analytic == pytest.approx(0.589, abs=0.001)

    def test_monotone_in_nominal_and_sigma(self):
        rng = np.random.default_rng(9)
        y = rng.standard_normal(5000)
        rates_nominal = [coverage_marginal(0.0, 1.0, y, g) for g in (0.3, 0.5, 0.7, 0.9)]
        assert all(a <= b for a, b in zip(rates_nominal, rates_nominal[1:]))
        rates_sigma = [coverage_marginal(0.0, s, y, 0.5) for s in (0.5, 1.0, 2.0)]
        assert all(a <= b for a, b in zip(rates_sigma, rates_sigma[1:]))

    def test_beliefs_interface(self):
        rng = np.random.default_rng(10)
        beliefs = [identity_belief([0.0, 0.0], [1.0, 2.0]) for _ in range(4000)]
        targets = [rng.standard_normal(2) * [1.0, 2.0] for _ in range(4000)]
        rate = coverage(beliefs, targets, 0.5)
        assert abs(rate - 0.5) < 0.02

    def test_table_signature_severe_undercoverage(self):
        # forecast std fixed at 0.25-noise scale, truth at sigma 2.0
        rng = np.random.default_rng(11)
        y = 2.0 * rng.standard_normal(50_000)
        rate = coverage_marginal(0.0, 0.25, y, 0.5)
        assert rate < 0.15


class TestCrps:
    def test_standard_normal_at_zero(self):
        assert crps_gaussian(0.0, 1.0, 0.0) == pytest.approx(0.233695, abs=1e-5)

    def test_sigma_zero_absolute_error(self):
        assert crps_gaussian(1.0, 0.0, 3.5) == 2.5

    def test_nonnegative_and_minimized_at_truth(self):
        mus = np.linspace(-3, 3, 61)
        vals = crps_gaussian(mus, 1.0, 0.0)
        assert np.all(vals >= 0)
        assert mus[np.argmin(vals)] == pytest.approx(0.0, abs=1e-9)

    def test_ensemble_matches_gaussian(self):
        rng = np.random.default_rng(12)
        xs = 0.7 * rng.standard_normal(100_000) + 0.2
        for y in (-1.0, 0.2, 2.0):
            a = crps_ensemble(xs, y)
            b = crps_gaussian(0.2, 0.7, y)
            assert a == pytest.approx(b, rel=0.01)

    def test_ensemble_vectorized(self):
        rng = np.random.default_rng(13)
        xs = rng.standard_normal((500, 7))
        ys = rng.standard_normal(7)
        out = crps_ensemble(xs, ys)
        assert out.shape == (7,)
        assert out[3] == pytest.approx(crps_ensemble(xs[:, 3], ys[3]))

    def test_empty_ensemble_rejected(self):
        with pytest.raises(ValueError):
            crps_ensemble(np.zeros((0,)), 0.0)


class TestMahalanobis:
    def _calibrated(self, n, d, seed):
        rng = np.random.default_rng(seed)
        lam = rng.uniform(0.5, 2.0, size=d)
        beliefs, targets = [], []
        for _ in range(n):
            b = identity_belief(rng.standard_normal(d), lam)
            from noisebench.belief import mean as bmean
            targets.append(bmean(b) + lam * rng.standard_normal(d))
            beliefs.append(b)
        return beliefs, targets

    def test_mean_residual_moment(self):
        beliefs, targets = self._calibrated(10_000, 6, seed=14)
        rep = mahalanobis_suite(beliefs, targets, use_mean_residual=True)
        assert 0.95 <= rep.mean_ratio <= 1.05
        assert rep.ks.p_value > 0.01

    def test_sample_residual_inflation(self):
        beliefs, targets = self._calibrated(10_000, 6, seed=15)
        rep = mahalanobis_suite(beliefs, targets, use_mean_residual=False,
                                rng=np.random.default_rng(16))
        assert 1.9 <= rep.mean_ratio <= 2.1

    def test_inflation_ratio_factor_two(self):
        beliefs, targets = self._calibrated(10_000, 4, seed=17)
        mean_rep = mahalanobis_suite(beliefs, targets, use_mean_residual=True)
        samp_rep = mahalanobis_suite(beliefs, targets, use_mean_residual=False,
                                     rng=np.random.default_rng(18))
        assert samp_rep.mean_m / mean_rep.mean_m == pytest.approx(2.0, rel=0.05)

    def test_point_mass_rejected_by_ks(self):
        beliefs = [identity_belief(np.zeros(3), np.ones(3)) for _ in range(500)]
        targets = [np.zeros(3)] * 500
        rep = mahalanobis_suite(beliefs, targets)
        assert rep.mean_m == 0.0
        assert rep.ks.p_value < 1e-6


class TestSwPassRate:
    def test_gaussian_dimensions_pass(self):
        rng = np.random.default_rng(19)
        z = rng.standard_normal((400, 60))
        assert sw_pass_rate(z, q=0.05) >= 0.9

    def test_exponential_dimensions_fail(self):
        rng = np.random.default_rng(20)
        z = rng.exponential(size=(400, 60))
        assert sw_pass_rate(z, q=0.05) < 0.05

    def test_short_dimensions_skipped_with_warning(self):
        rng = np.random.default_rng(21)
        z = rng.standard_normal((2, 5))
        with pytest.raises(ValueError):
            sw_pass_rate(z)

    def test_mixed_gaussian_and_exponential(self):
        rng = np.random.default_rng(22)
        z = np.concatenate([rng.standard_normal((300, 30)),
                            rng.exponential(size=(300, 30))], axis=1)
        rate = sw_pass_rate(z, q=0.05)
        assert 0.4 <= rate <= 0.55


class TestMisc:
    def test_mse(self):
        assert mse(np.array([1.0, 2.0]), np.array([0.0, 4.0])) == 2.5

    def test_wilson_contains_phat(self):
        lo, hi = wilson_interval(90, 100)
        assert lo < 0.9 < hi

    def test_testresult_validates_p(self):
        with pytest.raises(ValueError):
            TestResult(statistic=0.0, p_value=1.5, n=10)

    def test_block_roundtrip(self):
        block = CalibrationBlock(
            coverage_50=0.5, coverage_90=0.9, sw_pass_rate=0.95,
            pit_histogram=np.arange(20), mahalanobis_ks=TestResult(0.1, 0.5, 100),
            crps=0.2, mse=0.04, scenario="X", sigma=0.25, horizon=64,
            n_windows=10, n_pairs=640)
        back = CalibrationBlock.from_dict(block.to_dict())
        assert back.coverage_50 == 0.5
        assert back.mahalanobis_ks.p_value == 0.5
        np.testing.assert_array_equal(back.pit_histogram, np.arange(20))
