import math

import numpy as np
import pytest

from muon_lab import noise as nz
from muon_lab import objectives as ob
from muon_lab.streams import make_stream


def pareto_quadrature_moment(alpha, x_m, p):
    """Independent oracle: E|X|^p = int_{x_m}^inf x^p alpha x_m^alpha x^{-alpha-1} dx
    by log-spaced trapezoid plus the analytic tail remainder."""
    xs = np.exp(np.linspace(np.log(x_m), np.log(x_m) + 40, 400_000))
    dens = alpha * x_m ** alpha * xs ** (-alpha - 1)
    body = np.trapezoid(xs ** p * dens, xs)
    top = xs[-1]
    tail = alpha * x_m ** alpha * top ** (p - alpha) / (alpha - p)
    return body + tail


class TestParetoMoment:
    @pytest.mark.parametrize("alpha,x_m,p,expect", [
        (1.8, 1.0, 1.5, 6.0),
        (3.0, 1.0, 2.0, 3.0),
        (2.0, 1.0, 1.0, 2.0),
    ])
    def test_analytic_values(self, alpha, x_m, p, expect):
        got = nz.pareto_abs_moment(alpha, x_m, p)
        assert got == pytest.approx(expect, rel=1e-12)
        assert got == pytest.approx(pareto_quadrature_moment(alpha, x_m, p), rel=1e-4)

    def test_monte_carlo_light_tail(self):
        # alpha = 5, p = 2 has a finite-variance estimator
        rng = np.random.default_rng(0)
        x = 1.0 + rng.pareto(5.0, 2_000_000)
        assert x.mean() ** 0 * (x ** 2).mean() == pytest.approx(
            nz.pareto_abs_moment(5.0, 1.0, 2.0), rel=0.01)

    def test_infinite_moment(self):
        with pytest.raises(nz.InfiniteMomentError):
            nz.pareto_abs_moment(1.8, 1.0, 1.8)

    def test_student_moment_against_quadrature(self):
        alpha, s, p = 2.5, 1.3, 1.5
        xs = np.linspace(0, 4000, 4_000_000)
        c = math.gamma((alpha + 1) / 2) / (math.sqrt(alpha * math.pi)
                                           * math.gamma(alpha / 2))
        dens = 2 * c * (1 + xs ** 2 / alpha) ** (-(alpha + 1) / 2)
        got = nz.student_abs_moment(alpha, s, p)
        assert got == pytest.approx(s ** p * np.trapezoid(xs ** p * dens, xs), rel=1e-3)


class TestNoiseModel:
    def test_validation(self):
        with pytest.raises(ValueError):
            nz.NoiseModel("weird")
        with pytest.raises(ValueError):
            nz.NoiseModel("gaussian", p=2.5)
        with pytest.raises(nz.InfiniteMomentError):
            nz.NoiseModel("symmetric-pareto", alpha=1.4, p=1.5)
        with pytest.raises(ValueError):
            nz.NoiseModel("symmetric-pareto", alpha=2.0, p=1.5)
        assert nz.NoiseModel("symmetric-pareto", alpha=1.8, p=1.5).heavy_tailed
        assert not nz.NoiseModel("gaussian", p=2.0).heavy_tailed

    def test_none_kind_zero_matrix(self):
        r = nz.sample_noise_matrix(nz.NoiseModel("none"), (3, 2), make_stream(0))
        assert not r.any()

    def test_gaussian_mean_zero(self):
        model = nz.NoiseModel("gaussian", scale=1.0, p=2.0)
        rng = make_stream(1)
        x = nz._entry_stack(model, (1_000_000,), rng)
        se = x.std() / 1000
        assert abs(x.mean()) < 4 * se

    def test_pareto_entries_symmetric_with_floor(self):
        model = nz.NoiseModel("symmetric-pareto", alpha=1.8, scale=0.7, p=1.5)
        x = nz._entry_stack(model, (200_000,), make_stream(2))
        assert np.abs(x).min() >= 0.7
        assert abs((x > 0).mean() - 0.5) < 0.01

    def test_stack_of_one_matches_single_draw(self):
        model = nz.NoiseModel("symmetric-pareto", alpha=1.8, scale=1.0, p=1.5)
        a = nz.sample_noise_matrix(model, (4, 3), make_stream(3))
        b = nz._entry_stack(model, (1, 4, 3), make_stream(3))[0]
        assert np.array_equal(a, b)

    def test_same_seed_same_draws(self):
        model = nz.NoiseModel("student-t", alpha=2.5, scale=1.0, p=1.5)
        a = nz.sample_noise_matrix(model, (5, 5), make_stream(4, "x"))
        b = nz.sample_noise_matrix(model, (5, 5), make_stream(4, "x"))
        assert np.array_equal(a, b)


def quadratic_oracle(n_components=3, noise_kind="none", sampling="index-du-n",
                     **noise_kw):
    obj = ob.make_objective("geman-mcclure", (3, 2), n_components, scale=1.0,
                            anchor_seed=7)
    return nz.GradientOracle(obj, sampling, nz.NoiseModel(noise_kind, **noise_kw))


class TestStochasticGradient:
    def test_noiseless_additive_is_exact(self):
        orc = quadratic_oracle(sampling="additive-noise")
        w = np.ones((3, 2))
        g = nz.stochastic_gradient(orc, w, make_stream(5))
        assert np.array_equal(g, ob.grad_full(orc.objective, w))

    def test_single_component_index_is_exact(self):
        orc = quadratic_oracle(n_components=1)
        w = np.ones((3, 2))
        g = nz.stochastic_gradient(orc, w, make_stream(6))
        assert np.array_equal(g, ob.grad_full(orc.objective, w))

    def test_index_unbiased(self):
        orc = quadratic_oracle(n_components=3)
        w = 0.3 * np.ones((3, 2))
        devs = nz.minibatch_deviation_stack(orc, w, 1, 100_000, make_stream(7))
        se = devs.std(axis=0, ddof=1) / math.sqrt(100_000)
        assert np.all(np.abs(devs.mean(axis=0)) <= 4 * se + 1e-12)

    def test_minibatch_b1_bitwise(self):
        orc = quadratic_oracle(sampling="both", noise_kind="symmetric-pareto",
                               alpha=1.8, scale=0.5, p=1.5)
        w = np.ones((3, 2))
        a = nz.stochastic_gradient(orc, w, make_stream(8))
        b = nz.minibatch_gradient(orc, w, 1, make_stream(8))
        assert np.array_equal(a, b)

    def test_noiseless_any_batch(self):
        orc = quadratic_oracle(sampling="additive-noise")
        w = np.ones((3, 2))
        g = nz.minibatch_gradient(orc, w, 64, make_stream(9))
        assert np.array_equal(g, ob.grad_full(orc.objective, w))

    def test_batch_reduces_p_variance(self):
        orc = quadratic_oracle(sampling="additive-noise",
                               noise_kind="symmetric-pareto",
                               alpha=1.8, scale=1.0, p=1.5)
        w = np.ones((3, 2))
        e1 = nz.estimate_p_variance(orc, w, 1, 1.5, 20_000, make_stream(10))
        e64 = nz.estimate_p_variance(orc, w, 64, 1.5, 20_000, make_stream(11))
        assert e64.estimate < e1.estimate

    def test_batch_validation(self):
        orc = quadratic_oracle()
        with pytest.raises(ValueError):
            nz.minibatch_gradient(orc, np.ones((3, 2)), 0, make_stream(12))

    def test_index_mode_rejects_noise(self):
        with pytest.raises(ValueError):
            quadratic_oracle(noise_kind="gaussian", sampling="index-du-n")


class TestPVariance:
    def test_zero_for_deterministic(self):
        orc = quadratic_oracle(sampling="additive-noise")
        est = nz.estimate_p_variance(orc, np.ones((3, 2)), 4, 1.5, 200,
                                     make_stream(13))
        assert est.estimate == 0.0 and est.stderr == 0.0

    def test_requires_trials(self):
        orc = quadratic_oracle()
        with pytest.raises(ValueError):
            nz.estimate_p_variance(orc, np.ones((3, 2)), 1, 1.5, 10, make_stream(14))

    def test_single_sample_below_certificate(self):
        model = nz.NoiseModel("symmetric-pareto", alpha=1.8, scale=1.0, p=1.5)
        obj = ob.make_objective("powered-distance", (8, 4), 1, anchor_seed=7)
        orc = nz.GradientOracle(obj, "additive-noise", model)
        w = obj.components[0].anchor + 1.0
        est = nz.estimate_p_variance(orc, w, 1, 1.5, 50_000, make_stream(15))
        cert = nz.oracle_sigma_certificate(orc, 1.5)
        assert est.estimate <= cert + 4 * est.stderr

    def test_proposition_bound_and_slope(self):
        model = nz.NoiseModel("symmetric-pareto", alpha=1.8, scale=1.0, p=1.5)
        obj = ob.make_objective("powered-distance", (8, 4), 1, anchor_seed=7)
        orc = nz.GradientOracle(obj, "additive-noise", model)
        w = obj.components[0].anchor + 1.0
        cert = nz.oracle_sigma_certificate(orc, 1.5)
        bs = [1, 4, 16, 64]
        ests = []
        for b in bs:
            est = nz.estimate_p_variance(orc, w, b, 1.5, 20_000, make_stream(16, b))
            bound = 2 ** (2 - 1.5) * cert / b ** 0.5
            assert est.estimate <= bound * (1 + 4 * est.stderr / max(est.estimate, 1e-12))
            ests.append(est.estimate)
        slope = np.polyfit(np.log(bs), np.log(ests), 1)[0]
        assert -0.75 <= slope <= -0.3   # coarse at 2e4 trials; tight in acceptance

    def test_index_certificate_from_component_range(self):
        orc = quadratic_oracle(n_components=4)
        w = 0.2 * np.ones((3, 2))
        cert = nz.oracle_sigma_certificate(orc, 2.0)
        est = nz.estimate_p_variance(orc, w, 1, 2.0, 20_000, make_stream(17))
        assert est.estimate <= cert + 4 * est.stderr

    def test_both_mode_combines(self):
        orc_both = quadratic_oracle(sampling="both", noise_kind="gaussian",
                                    scale=0.5, p=2.0)
        idx = nz.oracle_sigma_certificate(quadratic_oracle(), 2.0)
        add = nz.noise_sigma_certificate(orc_both.noise, (3, 2), 2.0)
        assert nz.oracle_sigma_certificate(orc_both, 2.0) == pytest.approx(
            idx + 2 ** 0 * add)


class TestLargeBatchTiers:
    def test_gaussian_exact_scaling(self):
        model = nz.NoiseModel("gaussian", scale=2.0, p=2.0)
        avg = nz._noise_average_stack(model, (2, 2), 10 ** 12, 50_000,
                                      make_stream(18), exact_max=1024)
        assert abs(avg.std() * math.sqrt(10 ** 12) - 2.0) < 0.02

    def test_stable_tier_symmetric_and_certified(self):
        model = nz.NoiseModel("symmetric-pareto", alpha=1.8, scale=1.0, p=1.5)
        b = 2 ** 20
        avg = nz._noise_average_stack(model, (1, 1), b, 200_000,
                                      make_stream(19), exact_max=1024).ravel()
        assert abs((avg > 0).mean() - 0.5) < 0.01
        # p-th moment respects the certificate decay with room to spare
        mom = (np.abs(avg) ** 1.5).mean()
        bound = 2 ** 0.5 * nz.pareto_abs_moment(1.8, 1.0, 1.5) / b ** 0.5
        assert mom < bound

    def test_stable_matches_exact_at_handoff(self):
        # tier consistency: exact and limiting-law p-moments agree within a
        # modest factor at the switch point
        model = nz.NoiseModel("symmetric-pareto", alpha=1.8, scale=1.0, p=1.5)
        b = 4096
        ex = nz._noise_average_stack(model, (1, 1), b, 40_000, make_stream(20),
                                     exact_max=b).ravel()
        ap = nz._noise_average_stack(model, (1, 1), b, 200_000, make_stream(21),
                                     exact_max=b - 1).ravel()
        r = (np.abs(ap) ** 1.5).mean() / (np.abs(ex) ** 1.5).mean()
        assert 0.6 < r < 1.6

    def test_astronomical_batch_underflows_to_zero(self):
        model = nz.NoiseModel("symmetric-pareto", alpha=1.8, scale=1.0, p=1.5)
        avg = nz._noise_average_stack(model, (2, 2), 8 * 2 ** 5000, 3,
                                      make_stream(22), exact_max=1024)
        assert not avg.any()

    def test_student_light_tail_uses_clt(self):
        model = nz.NoiseModel("student-t", alpha=4.0, scale=1.0, p=2.0)
        b = 2 ** 24
        avg = nz._noise_average_stack(model, (1, 1), b, 100_000,
                                      make_stream(23), exact_max=1024).ravel()
        expect_sd = math.sqrt(4.0 / 2.0 / b)
        assert avg.std() == pytest.approx(expect_sd, rel=0.02)

    def test_index_weights_tiers(self):
        # int64-range batches use exact multinomial counts, bigger ones the
        # Gaussian limit, absurd ones the exact mean
        w1 = nz._index_weight_stack(4, 10 ** 6, 1000, make_stream(24))
        assert np.allclose(w1.sum(axis=1), 1.0)
        assert w1.std() == pytest.approx(math.sqrt(0.25 * 0.75 / 10 ** 6), rel=0.1)
        w2 = nz._index_weight_stack(4, 2 ** 70, 1000, make_stream(25))
        assert np.allclose(w2.sum(axis=1), 1.0)
        assert 0 < w2.std() < 1e-9
        w3 = nz._index_weight_stack(4, 2 ** 200, 5, make_stream(26))
        assert np.all(w3 == 0.25)

    def test_sas_sampler_matches_closed_moment(self):
        z = nz._sas_standard(1.8, 2_000_000, make_stream(27))
        got = np.abs(z).mean()
        assert got == pytest.approx(nz.sas_abs_moment(1.8, 1.0), rel=0.01)


class TestCertificates:
    def test_none(self):
        assert nz.noise_sigma_certificate(nz.NoiseModel("none"), (3, 3), 1.5) == 0.0

    def test_gaussian_jensen_form(self):
        model = nz.NoiseModel("gaussian", scale=0.5, p=2.0)
        assert nz.noise_sigma_certificate(model, (4, 2), 2.0) == pytest.approx(
            8 * 0.25)

    def test_heavy_tail_subadditive_form(self):
        model = nz.NoiseModel("symmetric-pareto", alpha=1.8, scale=1.0, p=1.5)
        got = nz.noise_sigma_certificate(model, (8, 4), 1.5)
        assert got == pytest.approx(32 * 6.0)

    def test_certificate_dominates_estimate(self):
        model = nz.NoiseModel("symmetric-pareto", alpha=1.8, scale=1.0, p=1.5)
        mc = nz.noise_sigma_estimate(model, (8, 4), 1.5, samples=200_000)
        assert mc <= nz.noise_sigma_certificate(model, (8, 4), 1.5)


class TestHeavyTailWitness:
    def test_second_moment_grows_p_moment_settles(self):
        model = nz.NoiseModel("symmetric-pareto", alpha=1.8, scale=1.0, p=1.5)
        rows = nz.moment_trend(model, 1.5, [2 ** k for k in range(10, 18)])
        second = [r[1] for r in rows]
        pth = [r[2] for r in rows]
        assert all(b >= a for a, b in zip(second, second[1:]))
        assert second[-1] / second[0] > 2.0
        assert abs(pth[-1] / pth[-2] - 1.0) < 0.05

    def test_light_tail_second_moment_settles(self):
        model = nz.NoiseModel("gaussian", scale=1.0, p=2.0)
        rows = nz.moment_trend(model, 2.0, [2 ** k for k in range(10, 16)])
        second = [r[1] for r in rows]
        assert abs(second[-1] / second[-2] - 1.0) < 0.05
