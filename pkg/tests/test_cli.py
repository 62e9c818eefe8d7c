import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from langevin_coupling.cli import run


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for suffix in ("SEED", "WORKERS", "OUT", "BUDGET", "LOG_LEVEL"):
        monkeypatch.delenv("LANGEVIN_COUPLING_" + suffix, raising=False)


def _write(tmp_path, payload, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return str(path)


def _run_dir(capsys):
    return Path(capsys.readouterr().out.strip().splitlines()[-1])


def test_oracle_double_well(tmp_path, capsys):
    cfg = _write(
        tmp_path,
        {"potential": {"kind": "double_well_1d"}, "oracle": {"bounds": [[-2.0, 2.0]], "resolution": 4001}},
    )
    assert run(["oracle", "--config", cfg, "--out", str(tmp_path / "runs")]) == 0
    report = json.loads((_run_dir(capsys) / "oracle.json").read_text(encoding="utf-8"))
    assert report["grid"]["H_U"] == pytest.approx(0.8076, abs=1e-3)
    assert report["string"]["H_U"] == pytest.approx(0.8076, abs=1e-3)
    (barrier,) = report["string"]["barriers"]
    assert barrier["ascent"] == pytest.approx(0.8076, abs=1e-3)
    assert barrier["descent"] == pytest.approx(1.2074, abs=1e-3)


def test_sample_is_reproducible(tmp_path, capsys):
    cfg = _write(
        tmp_path,
        {
            "potential": {"kind": "double_well_1d"},
            "epsilons": [0.7],
            "step": 0.01,
            "max_time": 5.0,
            "init": {"x0": [0.974], "y0": [-1.0241]},
        },
    )
    dirs = []
    for out in ("a", "b"):
        assert run(["sample", "--config", cfg, "--out", str(tmp_path / out), "--budget", "40", "--seed", "9"]) == 0
        dirs.append(_run_dir(capsys))
    first = (dirs[0] / "samples_eps0.7.csv").read_bytes()
    assert first == (dirs[1] / "samples_eps0.7.csv").read_bytes()
    manifest = json.loads((dirs[0] / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["seed"] == 9
    assert manifest["partial"] is False
    assert len(pd.read_csv(dirs[0] / "samples_eps0.7.csv")) == 40


def test_estimate_exponential_file(tmp_path, capsys):
    tau = np.random.default_rng(8).exponential(0.5, 100_000)
    frame = pd.DataFrame({"sample_index": np.arange(tau.size), "tau_c": tau, "censored": False, "steps": 1})
    samples = tmp_path / "exp2.csv"
    frame.to_csv(samples, index=False)
    assert run(["estimate", str(samples), "--out", str(tmp_path / "runs")]) == 0
    run_dir = _run_dir(capsys)
    est = json.loads((run_dir / "estimate_exp2.json").read_text(encoding="utf-8"))
    assert est["rate_r"] == pytest.approx(2.0, rel=0.05)
    assert (run_dir / "survival_exp2.csv").exists()


def test_invalid_potential_kind_exits_1(tmp_path):
    cfg = _write(tmp_path, {"potential": {"kind": "triple_well"}})
    assert run(["oracle", "--config", cfg, "--out", str(tmp_path / "runs")]) == 1


def test_unknown_subcommand_exits_1():
    assert run(["bogus"]) == 1


def test_missing_sample_file_exits_2(tmp_path):
    assert run(["estimate", str(tmp_path / "none.csv"), "--out", str(tmp_path / "runs")]) == 2


def test_sample_without_init_is_a_config_error(tmp_path):
    cfg = _write(tmp_path, {"potential": {"kind": "double_well_1d"}, "epsilons": [0.5]})
    assert run(["sample", "--config", cfg, "--out", str(tmp_path / "runs")]) == 1
