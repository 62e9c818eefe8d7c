import math

import numpy as np
import pytest

from langevin_coupling.errors import DegenerateFitError, InputError, NoExponentialTailError
from langevin_coupling.estimation.tail import (
    GridConfig,
    SurvivalCurve,
    TailEstimate,
    agresti_coull,
    bootstrap_rate_error,
    estimate_rate,
    estimate_rate_from_times,
    find_t_star,
    grid_times,
    survival_rows,
    weighted_regression,
)
from langevin_coupling.protocol.types import CouplingRecord


class TestAgrestiCoull:
    def test_half_of_ten(self):
        p, lo, hi = agresti_coull(5, 10)
        assert p == pytest.approx(0.5)
        assert hi - p == pytest.approx(0.26341, abs=1e-5)
        assert p - lo == pytest.approx(0.26341, abs=1e-5)

    def test_bounds_are_clamped(self):
        _, lo, _ = agresti_coull(0, 10)
        _, _, hi = agresti_coull(10, 10)
        assert lo == 0.0
        assert hi == 1.0

    @pytest.mark.parametrize("n_i, m", [(-1, 10), (11, 10), (0, 0)])
    def test_rejects_bad_counts(self, n_i, m):
        with pytest.raises(InputError):
            agresti_coull(n_i, m)


class TestWeightedRegression:
    def test_exact_line(self):
        t = np.linspace(0.0, 3.0, 7)
        a, b = weighted_regression(np.column_stack([t, -2.0 * t + 0.5]), np.linspace(1.0, 0.1, 7))
        assert a == pytest.approx(-2.0, abs=1e-12)
        assert b == pytest.approx(0.5, abs=1e-12)

    def test_constant_weights_match_least_squares(self):
        rng = np.random.default_rng(0)
        t = rng.uniform(0.0, 5.0, 40)
        y = 1.3 * t - 0.2 + rng.normal(0.0, 0.3, 40)
        a, b = weighted_regression(np.column_stack([t, y]), np.full(40, 0.25))
        slope, intercept = np.polyfit(t, y, 1)
        assert a == pytest.approx(slope, abs=1e-12)
        assert b == pytest.approx(intercept, abs=1e-12)

    def test_degenerate(self):
        with pytest.raises(DegenerateFitError):
            weighted_regression([[1.0, 2.0], [1.0, 3.0]], [1.0, 1.0])
        with pytest.raises(DegenerateFitError):
            weighted_regression([[1.0, 2.0], [2.0, 3.0]], [0.0, 0.0])

    def test_weight_shape(self):
        with pytest.raises(InputError):
            weighted_regression([[1.0, 2.0], [2.0, 3.0]], [1.0])


class TestSurvivalCurve:
    def test_counts(self):
        curve = SurvivalCurve.from_times([0.5, 1.0, 1.5, 2.0], [0.0, 1.0, 2.0])
        np.testing.assert_array_equal(curve.counts, [4, 2, 0])
        assert curve.total == 4

    def test_rejects_unsorted_grid(self):
        with pytest.raises(InputError):
            SurvivalCurve(times=np.array([0.0, 2.0, 1.0]), counts=np.array([3, 2, 1]), total=3)

    def test_flat_curve_has_no_exponential_tail(self):
        curve = SurvivalCurve(times=np.linspace(0.0, 1.0, 10), counts=np.full(10, 50), total=100)
        with pytest.raises(NoExponentialTailError):
            find_t_star(curve)

    def test_flat_far_tail_does_not_hide_the_exponential(self):
        m = 100_000
        t = np.linspace(0.0, 11.0, 200)
        counts = np.maximum(np.floor(m * np.exp(-t)), 2).astype(np.int64)
        assert np.all(counts[-5:] == 2)
        est = find_t_star(SurvivalCurve(times=t, counts=counts, total=m))
        assert est.scanned
        assert est.n0_index == 0
        assert est.rate_r == pytest.approx(1.0, rel=0.02)

    def test_too_few_usable_points(self):
        curve = SurvivalCurve(times=np.linspace(0.0, 1.0, 10), counts=np.array([9, 5, 2] + [0] * 7), total=10)
        with pytest.raises(InputError):
            find_t_star(curve)


def test_log_grid_starts_at_zero():
    t = grid_times(np.array([0.01, 0.5, 4.0]), GridConfig(points=20, spacing="log"))
    assert t[0] == 0.0
    assert t[-1] == pytest.approx(4.0)
    assert np.all(np.diff(t) > 0)


class TestEstimateRate:
    @pytest.mark.parametrize("rate", [0.1, 1.0, 10.0])
    def test_pure_exponential(self, rate):
        sample = np.random.default_rng(17).exponential(1.0 / rate, size=100_000)
        est = estimate_rate_from_times(sample, None)
        assert est.rate_r == pytest.approx(rate, rel=0.05)
        assert not est.high_censoring
        assert est.sample_count == 100_000

    def test_mixture_keeps_slow_component(self):
        rng = np.random.default_rng(23)
        fast = rng.random(100_000) < 0.5
        sample = np.where(fast, rng.exponential(1.0 / 5.0, 100_000), rng.exponential(1.0 / 0.5, 100_000))
        est = estimate_rate_from_times(sample, None)
        assert est.rate_r == pytest.approx(0.5, rel=0.10)
        assert est.t_star > 0.5

    def test_censored_samples_count_as_survivors(self):
        cap = math.log(1.0 / 0.3)
        raw = np.random.default_rng(29).exponential(1.0, 100_000)
        censored = raw > cap
        est = estimate_rate_from_times(np.minimum(raw, cap), censored)
        assert est.high_censoring
        assert est.censored_fraction == pytest.approx(0.3, abs=0.01)
        assert est.rate_r == pytest.approx(1.0, rel=0.05)

    def test_needs_enough_samples(self):
        with pytest.raises(InputError, match="uncensored"):
            estimate_rate_from_times(np.ones(50), None)

    def test_constant_times(self):
        with pytest.raises(DegenerateFitError):
            estimate_rate_from_times(np.ones(50), None, GridConfig(min_uncensored=10))

    def test_from_records(self):
        times = np.random.default_rng(3).exponential(0.5, 5000)
        records = [CouplingRecord(sample_index=i, tau_c=float(t), censored=False, steps=1) for i, t in enumerate(times)]
        est = estimate_rate(records, GridConfig(min_uncensored=1000))
        assert est.rate_r == pytest.approx(2.0, rel=0.15)
        assert TailEstimate.from_dict(est.to_dict()) == est


def test_bootstrap_error_is_small_and_positive():
    err = bootstrap_rate_error(1.0, 5000, GridConfig(min_uncensored=100), replicates=12, seed=1)
    assert 0.0 < err < 0.15


def test_survival_rows_mark_the_tail():
    sample = np.random.default_rng(5).exponential(1.0, 20_000)
    est = estimate_rate_from_times(sample, None, GridConfig(points=50, min_uncensored=100))
    rows = list(survival_rows(0.5, est))
    assert len(rows) == 50
    assert all(r["epsilon"] == 0.5 for r in rows)
    assert [r["in_tail"] for r in rows] == [r["t"] >= est.t_star for r in rows]
    assert rows[0]["log_p"] == pytest.approx(math.log(est.per_point[0].p_tilde))
