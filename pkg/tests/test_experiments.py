from dataclasses import replace

import pytest

from langevin_coupling.coupling.batch import SamplingBudget
from langevin_coupling.errors import InputError
from langevin_coupling.estimation.tail import GridConfig
from langevin_coupling.experiments.checks import confinement_frequency
from langevin_coupling.experiments.plans import (
    DW_LEFT,
    DW_RIGHT,
    EXPERIMENT_NAMES,
    ExperimentPlan,
    LandscapeCase,
    case_from_dict,
    default_plan,
)
from langevin_coupling.experiments.studies import RUNNERS, run_experiment
from langevin_coupling.landscape.potentials import DoubleWell1D, LehmerQuadratic
from langevin_coupling.protocol.types import CouplingRecord, InitCondition


def _case(**kw):
    base = dict(
        label="dw",
        potential=DoubleWell1D(),
        epsilons=(0.5, 0.6),
        init=InitCondition(x0=(DW_RIGHT,), y0=(DW_LEFT,)),
    )
    base.update(kw)
    return LandscapeCase(**base)


def test_every_experiment_has_a_runner():
    assert set(RUNNERS) == set(EXPERIMENT_NAMES)


class TestPlans:
    @pytest.mark.parametrize("name", ["quadratic_tails", "step_size", "double_well_barrier", "h1_check", "h2_check", "h3_check", "ips_barrier"])
    def test_default_plans_build(self, name):
        plan = default_plan(name, seed=5)
        assert plan.name == name
        assert plan.seed == 5
        assert plan.cases

    def test_unknown_name(self):
        with pytest.raises(InputError):
            default_plan("triple_well")
        with pytest.raises(InputError):
            ExperimentPlan(name="triple_well", cases=(_case(),))

    def test_needs_cases(self):
        with pytest.raises(InputError):
            ExperimentPlan(name="double_well_barrier", cases=())

    def test_empty_epsilons(self):
        with pytest.raises(InputError):
            _case(epsilons=())

    def test_step_size_needs_grids(self):
        with pytest.raises(InputError):
            ExperimentPlan(name="step_size", cases=(_case(),))
        with pytest.raises(InputError):
            ExperimentPlan(name="step_size", cases=(_case(),), steps=(0.01,), fine_divisors=(2,))

    def test_overshoot_check_needs_split_start(self):
        same = _case(init=InitCondition(x0=(DW_LEFT,), y0=(DW_LEFT,)))
        with pytest.raises(InputError, match="different basins"):
            ExperimentPlan(name="h3_check", cases=(same,))
        swapped = _case(init=InitCondition(x0=(DW_LEFT,), y0=(DW_RIGHT,)))
        with pytest.raises(InputError, match="global basin"):
            ExperimentPlan(name="h1_check", cases=(swapped,))

    def test_with_overrides(self):
        plan = default_plan("double_well_barrier").with_overrides(samples=10, seed=3, epsilons=(0.5, 0.7), max_time=5.0)
        assert plan.budget.samples == 10
        assert plan.seed == 3
        assert plan.cases[0].epsilons == (0.5, 0.7)
        assert plan.max_time == 5.0
        assert plan.params(0.5, 1).max_time == 5.0

    def test_case_from_dict(self):
        case = case_from_dict(
            {
                "label": "q",
                "potential": {"kind": "lehmer_quadratic", "size": 2},
                "epsilons": [0.5, 1.0],
                "init": {"x0": [1.0, 1.0], "y_box": [-1.0, 1.0]},
                "max_time": 30.0,
            }
        )
        assert case.potential == LehmerQuadratic(size=2)
        assert case.init.y_box == (-1.0, 1.0)
        assert case.to_dict()["max_time"] == 30.0


def test_confinement_frequency():
    records = [
        CouplingRecord(sample_index=0, tau_c=3.0, censored=False, steps=1, kappa_x=2.0),
        CouplingRecord(sample_index=1, tau_c=5.0, censored=False, steps=1, exit_y=0.5),
        CouplingRecord(sample_index=2, tau_c=4.0, censored=False, steps=1, kappa_x=0.5),
        CouplingRecord(sample_index=3, tau_c=0.8, censored=False, steps=1),
    ]
    assert confinement_frequency(records, 1.0) == (0.5, 2)
    assert confinement_frequency(records, 0.1) == (1.0, 4)
    assert confinement_frequency(records, 10.0) == (None, 0)


def test_step_size_study():
    plan = replace(
        default_plan("step_size", seed=3, budget=SamplingBudget(samples=64, block_size=64)),
        steps=(0.01, 0.005),
        fine_divisors=(2, 4),
    )
    report = run_experiment(plan)
    assert len(report.tables["first_passage"]) == 4
    assert [r["h"] for r in report.tables["bias"]] == [0.01, 0.005]
    assert {"slope", "intercept", "r_squared"} <= set(report.summary)
    assert report.summary["seed"] == 3
    assert not report.interrupted


def test_local_coupling_check():
    plan = default_plan("h2_check", seed=1).with_overrides(samples=200, epsilons=(0.6, 0.7), max_time=20.0)
    plan = replace(plan, cases=plan.cases[:2], grid=GridConfig(points=30, min_uncensored=10))
    report = run_experiment(plan)
    rows = report.tables["local_coupling"]
    assert len(rows) == 4
    for row in rows:
        assert row["coupled"] + row["exited"] + row["undecided"] == 200
        assert row["p_coupled"] is None or 0.0 <= row["p_coupled"] <= 1.0
    assert set(report.summary["cases"]) == {c.label for c in plan.cases}
    assert len(report.batches) == 4


@pytest.mark.slow
def test_quadratic_tails_rate_near_least_eigenvalue():
    plan = default_plan("quadratic_tails", seed=2, budget=SamplingBudget(samples=5000, block_size=500))
    plan = replace(plan, cases=plan.cases[:1], step=0.01, grid=GridConfig(min_uncensored=500))
    plan = plan.with_overrides(epsilons=(0.5, 1.0))
    report = run_experiment(plan)
    (case,) = report.summary["cases"]
    assert case["lambda_min"] == pytest.approx(0.5)
    assert all(err < 0.25 for err in case["relative_errors"].values())
    assert "barrier" in case
    assert {"rates", "survival", "extrapolation"} <= set(report.tables)
