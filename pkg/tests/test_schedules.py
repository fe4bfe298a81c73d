import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from muon_lab import schedules as sc


def brute_force_sums(eta, a, nu, p, beta, b, delta, kind, T):
    """O(T^2) oracle for all seven series by literal nested summation."""
    et = [eta / (t + 1) ** a for t in range(T)]
    bt = [b if kind == "constant" else math.ceil(b * delta ** t) for t in range(T)]
    x = (p - 1) / p
    out = {
        "eta": sum(et),
        "eta_pow": sum(e ** (1 + nu) for e in et),
        "eta_pow_over_batch": sum(et[t] ** (1 + nu) / bt[t] ** (p - 1)
                                  for t in range(T)),
        "eta_over_batch_root": sum(et[t] / bt[t] ** x for t in range(T)),
        "eta_beta": sum(et[t] * beta ** t for t in range(T)),
        "momentum_step": sum(
            et[t] * sum(beta ** i * et[t - i] ** nu for i in range(1, t + 1))
            for t in range(T)),
        "momentum_batch": sum(
            et[t] * sum(beta ** i / bt[t - i] ** x for i in range(t + 1))
            for t in range(T)),
    }
    return out


class TestAtFunctions:
    def test_step_values(self):
        s = sc.StepSchedule(1.0, 0.5)
        assert s.at(0) == 1.0
        assert s.at(3) == 0.5

    def test_geometric_batch(self):
        b = sc.BatchSchedule("geometric", 8, 2.0)
        assert b.at(5) == 256
        assert sc.batch_size_at(b, 0) == 8

    def test_constant_batch(self):
        b = sc.BatchSchedule("constant", 3)
        assert all(b.at(t) == 3 for t in (0, 5, 1000))

    def test_huge_geometric_batch(self):
        b = sc.BatchSchedule("geometric", 8, 2.0)
        big = b.at(10_000)
        assert isinstance(big, int) and big > 2 ** 9000
        assert b.log_at(10_000) == pytest.approx(
            math.log(8) + 10_000 * math.log(2), rel=1e-12)
        assert b.float_at(10_000) == math.inf
        assert b.float_at(10) == 8 * 2 ** 10

    def test_non_integral_delta_exact_small(self):
        b = sc.BatchSchedule("geometric", 5, 1.5)
        for t in range(20):
            assert b.at(t) == math.ceil(5 * 1.5 ** t)

    def test_validation(self):
        with pytest.raises(ValueError):
            sc.StepSchedule(0.0, 0.5)
        with pytest.raises(ValueError):
            sc.StepSchedule(1.0, 1.5)
        with pytest.raises(ValueError):
            sc.BatchSchedule("geometric", 4, 1.0)
        with pytest.raises(ValueError):
            sc.BatchSchedule("constant", 0)


class TestPartialSums:
    def test_matches_brute_force(self):
        for kind, beta in (("geometric", 0.6), ("constant", 0.0),
                           ("geometric", 0.0), ("constant", 0.9)):
            step = sc.StepSchedule(0.8, 0.7)
            batch = sc.BatchSchedule(kind, 4, 2.0)
            rep = sc.partial_sums(step, batch, 0.5, 1.5, beta, 200)
            oracle = brute_force_sums(0.8, 0.7, 0.5, 1.5, beta, 4, 2.0, kind, 200)
            for name in sc.SERIES:
                assert rep.partial[name] == pytest.approx(oracle[name], rel=1e-10), name

    def test_beta_zero_geometric_collapse(self):
        step = sc.StepSchedule(1.0, 0.7)
        rep = sc.partial_sums(step, sc.BatchSchedule("constant", 1), 1.0, 1.5,
                              0.0, 500)
        assert rep.partial["eta_beta"] == pytest.approx(step.at(0))
        assert rep.partial["momentum_step"] == 0.0

    def test_integral_lower_bound_value(self):
        step = sc.StepSchedule(1.0, 0.7)
        rep = sc.partial_sums(step, sc.BatchSchedule("constant", 1), 1.0, 1.5,
                              0.0, 100)
        expect = (1.0 / 0.3) * (101 ** 0.3 - 1.0)
        assert rep.eta_lower_bound == pytest.approx(expect, rel=1e-12)
        assert expect == pytest.approx(9.977, abs=5e-4)
        assert rep.partial["eta"] >= rep.eta_lower_bound

    def test_lower_bound_sound_across_horizons(self):
        step = sc.StepSchedule(0.5, 0.9)
        for T in (10, 100, 1000, 10_000, 100_000):
            rep = sc.partial_sums(step, sc.BatchSchedule("constant", 1), 1.0,
                                  1.5, 0.0, T)
            assert rep.partial["eta"] >= rep.eta_lower_bound

    def test_log_form_at_a_one(self):
        step = sc.StepSchedule(2.0, 1.0)
        assert step.sum_lower_bound(100) == pytest.approx(2.0 * math.log(101.0))

    def test_checkpoints_monotone(self):
        step = sc.StepSchedule(1.0, 0.7)
        rep = sc.partial_sums(step, sc.BatchSchedule("geometric", 8, 2.0), 1.0,
                              1.5, 0.5, 1000, checkpoints=(10, 100, 1000))
        for name in sc.SERIES:
            vals = [sums[name] for _, sums in rep.checkpoints]
            assert all(b >= a for a, b in zip(vals, vals[1:]))


class TestCaps:
    def test_eta_pow_cap_value(self):
        caps = sc.appendix_caps(sc.StepSchedule(1.0, 0.7),
                                sc.BatchSchedule("constant", 1), 1.0, 1.5, 0.0)
        assert caps["eta_pow"].value == pytest.approx(1.4 / 0.4)

    def test_eta_beta_cap(self):
        caps = sc.appendix_caps(sc.StepSchedule(1.0, 0.7),
                                sc.BatchSchedule("constant", 1), 1.0, 1.5, 0.9)
        assert caps["eta_beta"].value == pytest.approx(10.0)

    def test_divergent_regimes_flagged(self):
        caps = sc.appendix_caps(sc.StepSchedule(1.0, 0.4),
                                sc.BatchSchedule("constant", 4), 1.0, 1.5, 0.5)
        assert not caps["eta_pow"].finite
        assert not caps["eta_over_batch_root"].finite
        assert not caps["momentum_step"].finite
        assert not caps["eta"].finite

    def test_momentum_step_cap_formula(self):
        caps = sc.appendix_caps(sc.StepSchedule(1.0, 0.7),
                                sc.BatchSchedule("constant", 1), 1.0, 1.5, 0.5)
        assert caps["momentum_step"].value == pytest.approx(1.0 * 3.5)

    def test_geometric_batch_caps_keep_first_term(self):
        # counterexample to the cruder forms that start the geometric sum at
        # t = 1: at p = 2, delta = 2 the partial sums exceed them
        step = sc.StepSchedule(0.3, 0.7)
        batch = sc.BatchSchedule("geometric", 8, 2.0)
        rep = sc.partial_sums(step, batch, 1.0, 2.0, 0.0, 10_000)
        crude = 0.3 ** 2 / (8 * (2 - 1))
        assert rep.partial["eta_pow_over_batch"] > crude
        caps = sc.appendix_caps(step, batch, 1.0, 2.0, 0.0)
        assert rep.partial["eta_pow_over_batch"] <= caps["eta_pow_over_batch"].value

    def test_cap_soundness_randomized(self):
        rng = np.random.default_rng(99)
        for _ in range(8):
            nu = rng.uniform(0.3, 1.0)
            a = rng.uniform(1.0 / (1 + nu) + 0.02, 1.0)
            step = sc.StepSchedule(10 ** rng.uniform(-1, 0.5), a)
            batch = sc.BatchSchedule("geometric", int(rng.integers(1, 32)),
                                     rng.uniform(1.2, 3.0))
            p = rng.uniform(1.1, 2.0)
            beta = rng.uniform(0.0, 0.95)
            rep = sc.partial_sums(step, batch, nu, p, beta, 10_000)
            for name, cap in rep.caps.items():
                if cap.finite:
                    assert rep.partial[name] <= cap.value * (1 + 1e-12), name


class TestConditions:
    def test_good_schedule_passes_sgd_and_muon0(self):
        step = sc.StepSchedule(1.0, 0.7)
        batch = sc.BatchSchedule("geometric", 8, 2.0)
        for which in ("sgd", "muon0"):
            rep = sc.check_conditions(step, batch, 1.0, 1.5, 0.0, which,
                                      horizons=(10, 100, 1000, 10_000))
            assert rep.passed, rep.failures

    def test_small_exponent_fails_with_named_series(self):
        rep = sc.check_conditions(sc.StepSchedule(1.0, 0.4),
                                  sc.BatchSchedule("geometric", 8, 2.0),
                                  1.0, 1.5, 0.0, "sgd", horizons=(10, 100, 1000))
        assert not rep.passed
        assert "eta_pow" in rep.failures

    def test_constant_batch_fails_muon0(self):
        rep = sc.check_conditions(sc.StepSchedule(1.0, 0.7),
                                  sc.BatchSchedule("constant", 64),
                                  1.0, 1.5, 0.0, "muon0",
                                  horizons=(10, 100, 1000))
        assert not rep.passed
        assert "eta_over_batch_root" in rep.failures

    @pytest.mark.parametrize("kind,a", [("geometric", 0.7), ("constant", 0.7),
                                        ("geometric", 0.4), ("constant", 0.4)])
    def test_beta_zero_reduction(self, kind, a):
        step = sc.StepSchedule(1.0, a)
        batch = sc.BatchSchedule(kind, 8, 2.0)
        muon = sc.check_conditions(step, batch, 1.0, 1.5, 0.0, "muon",
                                   horizons=(10, 100, 1000))
        muon0 = sc.check_conditions(step, batch, 1.0, 1.5, 0.0, "muon0",
                                    horizons=(10, 100, 1000))
        assert muon.passed == muon0.passed

    def test_a_one_witness_uses_log_form(self):
        rep = sc.check_conditions(sc.StepSchedule(1.0, 1.0),
                                  sc.BatchSchedule("geometric", 8, 2.0),
                                  1.0, 1.5, 0.0, "muon0",
                                  horizons=(10, 100, 1000))
        assert "eta-divergence" not in rep.failures
        assert rep.passed

    def test_report_rows_shape(self):
        rep = sc.check_conditions(sc.StepSchedule(1.0, 0.7),
                                  sc.BatchSchedule("geometric", 8, 2.0),
                                  1.0, 1.5, 0.5, "muon", horizons=(10, 100))
        rows = rep.report.rows()
        assert len(rows) == 2 * len(sc.SERIES)
        names = {r[0] for r in rows}
        assert names == set(sc.SERIES)
        assert all(r[4] in ("ok", "diverges-as-required", "divergent-regime",
                            "cap-exceeded") for r in rows)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 1.0), st.floats(0.1, 10.0), st.integers(1, 300))
def test_step_sizes_nonincreasing(a, eta, t):
    s = sc.StepSchedule(eta, a)
    assert s.at(t + 1) <= s.at(t) <= s.at(0) == eta
