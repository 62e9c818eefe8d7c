import math

import numpy as np
import pytest

from langevin_coupling.coupling.batch import SamplingBudget
from langevin_coupling.errors import InputError, SweepError
from langevin_coupling.estimation.barrier import (
    RateSweep,
    SweepEntry,
    classify,
    extrapolate,
    extrapolation_rows,
    sweep,
    sweep_seed,
)
from langevin_coupling.estimation.tail import GridConfig
from langevin_coupling.landscape.potentials import LehmerQuadratic
from langevin_coupling.protocol.types import InitCondition, SimParams


def _arrhenius(epsilons, barrier, prefactor=1.0):
    return [prefactor * math.exp(-2.0 * barrier / e**2) for e in epsilons]


class TestExtrapolate:
    def test_noise_free_rates_recover_barrier(self):
        eps = [0.4, 0.45, 0.5, 0.6, 0.7]
        est = extrapolate(RateSweep.from_rates(eps, _arrhenius(eps, 0.8)), use_smallest=5)
        assert est.H_U == pytest.approx(0.8, abs=1e-6)
        assert est.r0 == pytest.approx(1.6, abs=1e-6)
        assert est.barrier_detected
        assert max(abs(r) for r in est.residuals) < 1e-9

    def test_prefactor_only_moves_the_slope(self):
        eps = [0.3, 0.4, 0.5, 0.6]
        est = extrapolate(RateSweep.from_rates(eps, _arrhenius(eps, 0.5, prefactor=3.0)), use_smallest=4)
        assert est.fit_intercept == pytest.approx(1.0, abs=1e-9)
        assert est.fit_slope == pytest.approx(-math.log(3.0), abs=1e-9)

    def test_two_points_have_no_stderr(self):
        eps = [0.5, 0.6]
        est = extrapolate(RateSweep.from_rates(eps, _arrhenius(eps, 0.3)), use_smallest=2)
        assert est.H_U == pytest.approx(0.3, abs=1e-9)
        assert math.isnan(est.intercept_stderr)

    def test_uses_smallest_noise_levels(self):
        eps = [0.9, 0.3, 0.5, 0.4]
        est = extrapolate(RateSweep.from_rates(eps, _arrhenius(eps, 0.2)), use_smallest=3)
        assert est.epsilons_used == (0.3, 0.4, 0.5)

    def test_default_caps_at_available(self):
        eps = [0.3, 0.4, 0.5]
        est = extrapolate(RateSweep.from_rates(eps, _arrhenius(eps, 0.2)))
        assert len(est.epsilons_used) == 3

    @pytest.mark.parametrize("n", [1, 4])
    def test_use_smallest_range(self, n):
        eps = [0.3, 0.4, 0.5]
        with pytest.raises(InputError):
            extrapolate(RateSweep.from_rates(eps, _arrhenius(eps, 0.2)), use_smallest=n)

    def test_needs_two_entries(self):
        with pytest.raises(SweepError):
            extrapolate(RateSweep.from_rates([0.5], [0.1]))

    def test_negative_intercept_means_no_barrier(self):
        eps = [0.3, 0.5, 0.7]
        est = extrapolate(RateSweep.from_rates(eps, [math.exp(0.5 / e**2) for e in eps]))
        assert est.fit_intercept == pytest.approx(-0.5, abs=1e-9)
        assert not est.barrier_detected

    def test_rows_end_with_intercept(self):
        eps = [0.4, 0.5, 0.6]
        rs = RateSweep.from_rates(eps, _arrhenius(eps, 0.8))
        est = extrapolate(rs, use_smallest=2)
        rows = list(extrapolation_rows(rs, est))
        assert [r["used"] for r in rows] == [True, True, False, False]
        assert rows[-1]["eps2"] == 0.0
        assert rows[-1]["line"] == pytest.approx(est.fit_intercept)


class TestRateSweep:
    def test_entries_are_sorted(self):
        rs = RateSweep.from_rates([0.7, 0.3, 0.5], [3.0, 1.0, 2.0])
        np.testing.assert_array_equal(rs.epsilons, [0.3, 0.5, 0.7])
        np.testing.assert_array_equal(rs.rates, [1.0, 2.0, 3.0])

    def test_rejects_duplicate_epsilons(self):
        with pytest.raises(InputError):
            RateSweep.from_rates([0.5, 0.5], [1.0, 2.0])

    @pytest.mark.parametrize("bad", [0.0, -1.0])
    def test_rejects_nonpositive_rates(self, bad):
        with pytest.raises(InputError):
            RateSweep(entries=(SweepEntry(0.5, bad, 0.0, 0, 0.0), SweepEntry(0.6, 1.0, 0.0, 0, 0.0)))

    def test_length_mismatch(self):
        with pytest.raises(InputError):
            RateSweep.from_rates([0.5, 0.6], [1.0])


class TestClassify:
    def test_flat_is_single_well(self):
        assert classify(RateSweep.from_rates([0.1, 0.5, 1.5], [0.50, 0.52, 0.49])) == "single_well_convex_like"

    def test_arrhenius_is_multi_well(self):
        eps = [0.4, 0.45, 0.5, 0.6, 0.7]
        assert classify(RateSweep.from_rates(eps, _arrhenius(eps, 0.8, prefactor=2.0))) == "multi_well"

    def test_decreasing_is_inconclusive(self):
        assert classify(RateSweep.from_rates([0.3, 0.5, 0.7], [3.0, 2.0, 1.0])) == "inconclusive"

    def test_two_levels_are_inconclusive(self):
        assert classify(RateSweep.from_rates([0.3, 0.5], [0.1, 1.0])) == "inconclusive"


def test_sweep_seeds_differ_per_level():
    seeds = {sweep_seed(7, i) for i in range(10)}
    assert len(seeds) == 10
    assert sweep_seed(7, 3) == sweep_seed(7, 3)


def test_sweep_needs_two_levels():
    with pytest.raises(SweepError):
        sweep(
            LehmerQuadratic(size=2),
            [0.5],
            SamplingBudget(samples=10),
            base=SimParams(epsilon=1.0, step=0.01),
            init=InitCondition(x0=(1.0, 1.0), y0=(-1.0, -1.0)),
        )


def test_sweep_with_too_few_uncensored_samples_raises():
    with pytest.raises(InputError, match="uncensored"):
        sweep(
            LehmerQuadratic(size=2),
            [0.5, 1.0],
            SamplingBudget(samples=10),
            base=SimParams(epsilon=1.0, step=0.01, max_time=50.0),
            init=InitCondition(x0=(1.0, 1.0), y0=(-1.0, -1.0)),
        )


def test_small_quadratic_sweep_estimates_every_level():
    rs = sweep(
        LehmerQuadratic(size=2),
        [0.5, 1.0],
        SamplingBudget(samples=2000, block_size=500),
        base=SimParams(epsilon=1.0, step=0.01, seed=5),
        init=InitCondition(x0=(1.0, 1.0), y0=(-1.0, -1.0)),
        grid=GridConfig(points=100, min_uncensored=500),
    )
    assert not rs.skipped
    assert len(rs.entries) == 2
    for rate in rs.rates:
        assert 0.25 < rate < 1.0


@pytest.mark.slow
def test_quadratic_sweep_rate_is_least_eigenvalue():
    seen = []
    rs = sweep(
        LehmerQuadratic(size=2),
        [0.5, 1.0],
        SamplingBudget(samples=20_000, block_size=1000),
        base=SimParams(epsilon=1.0, step=0.01, seed=11),
        init=InitCondition(x0=(1.0, 1.0), y0=(-1.0, -1.0)),
        on_batch=lambda eps, batch: seen.append((eps, len(batch.records))),
    )
    assert seen == [(0.5, 20_000), (1.0, 20_000)]
    assert not rs.skipped
    for rate in rs.rates:
        assert rate == pytest.approx(0.5, rel=0.2)
