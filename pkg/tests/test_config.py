import json

import pytest

from langevin_coupling.config import OracleConfig, load_config, parse_document
from langevin_coupling.errors import ConfigError
from langevin_coupling.landscape.potentials import DoubleWell1D

DOC = """{
  "schema_version": 1,
  "seed": 11,
  "budget": 500,
  "potential": {"kind": "double_well_1d"},
  "epsilons": [0.5, 0.7],
  "init": {"x0": [0.974], "y0": [-1.0241]},
  "grid": {"points": 50, "min_uncensored": 20},
  "oracle": {"method": "grid", "bounds": [[-2, 2]], "resolution": 101}
}
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(DOC, encoding="utf-8")
    return path


class TestLoad:
    def test_file_values(self, config_file):
        cfg = load_config(config_file, environ={})
        assert cfg.seed == 11
        assert cfg.budget == 500
        assert cfg.potential == DoubleWell1D()
        assert cfg.epsilons == (0.5, 0.7)
        assert cfg.init.x0 == (0.974,)
        assert cfg.grid_config.points == 50
        assert cfg.oracle == OracleConfig(method="grid", bounds=((-2.0, 2.0),), resolution=101)
        assert cfg.source == str(config_file)

    def test_defaults_without_file(self):
        cfg = load_config(environ={})
        assert cfg.seed == 0
        assert cfg.workers == 1
        assert cfg.potential is None
        with pytest.raises(ConfigError):
            cfg.require_potential()
        assert cfg.sim_params(0.5).step == 1e-3

    def test_env_beats_file_and_flag_beats_env(self, config_file):
        env = {"LANGEVIN_COUPLING_SEED": "21", "LANGEVIN_COUPLING_WORKERS": "3"}
        cfg = load_config(config_file, environ=env)
        assert cfg.seed == 21
        assert cfg.workers == 3
        cfg = load_config(config_file, environ=env, flags={"seed": 5, "workers": None})
        assert cfg.seed == 5
        assert cfg.workers == 3

    def test_bad_env_value(self):
        with pytest.raises(ConfigError, match="LANGEVIN_COUPLING_BUDGET"):
            load_config(environ={"LANGEVIN_COUPLING_BUDGET": "lots"})

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.json", environ={})

    def test_to_dict_is_json(self, config_file):
        raw = load_config(config_file, environ={}).to_dict()
        assert json.loads(json.dumps(raw))["potential"] == {"kind": "double_well_1d"}


class TestErrors:
    def test_unknown_key_reports_line(self):
        text = '{\n  "seed": 1,\n  "sead": 2\n}\n'
        with pytest.raises(ConfigError) as info:
            parse_document(text)
        assert info.value.line == 3
        assert info.value.key == "sead"
        assert info.value.exit_code == 1

    def test_unknown_section_key(self):
        with pytest.raises(ConfigError) as info:
            parse_document('{"grid": {"point": 10}}')
        assert info.value.key == "grid.point"

    def test_invalid_potential_kind(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{\n  "potential": {"kind": "triple_well"}\n}\n', encoding="utf-8")
        with pytest.raises(ConfigError) as info:
            load_config(path, environ={})
        assert info.value.line == 2
        assert "triple_well" in str(info.value)

    def test_schema_version(self):
        with pytest.raises(ConfigError, match="schema_version"):
            parse_document('{"schema_version": 2}')

    def test_syntax_error_line(self):
        with pytest.raises(ConfigError) as info:
            parse_document('{\n  "seed": 1,\n  "budget": \n}\n')
        assert info.value.line == 4

    def test_bad_section_values(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text('{"grid": {"points": 1}}', encoding="utf-8")
        with pytest.raises(ConfigError, match="grid"):
            load_config(path, environ={})
        path.write_text('{"init": {"x0": [1.0]}}', encoding="utf-8")
        with pytest.raises(ConfigError, match="init"):
            load_config(path, environ={})

    def test_workers_must_be_positive(self):
        with pytest.raises(ConfigError):
            load_config(environ={}, flags={"workers": 0})


class TestPlan:
    def test_plan_takes_budget_and_epsilons(self, config_file):
        plan = load_config(config_file, environ={}).plan("double_well_barrier")
        assert plan.budget.samples == 500
        assert plan.seed == 11
        assert plan.cases[0].epsilons == (0.5, 0.7)
        assert plan.grid.points == 50

    def test_plan_needs_a_name(self):
        with pytest.raises(ConfigError):
            load_config(environ={}).plan()
