import json

import pytest

from psp_cli import main

SMALL_CONFIG = {
    "protocol": {"n": 8, "k": 2, "calibration_runs": 30, "band_samples": 1000},
    "zeta": {"alpha_remote": 0.0, "min_width": 0.02, "bumps": 2},
    "adversaries": [{"kind": "inner_product", "name": "omega_T"}, {"kind": "constant", "name": "prior_mean"}],
    "distillation": {"L": 3, "block": 4, "passes": 2, "out_len": 4},
    "experiment": {"runs": 60, "master_seed": 21, "workers": 2},
}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(SMALL_CONFIG), encoding="utf-8")
    return str(path)


def test_check_degradation_writes_json_to_stdout(capsys):
    assert main(["check-degradation", "--n", "2", "--k", "4", "--grid", "5"]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["ratio"] >= 1.0
    assert result["mmse"] <= result["mse_unbiased"]


def test_check_degradation_accepts_explicit_grid(capsys):
    assert main(["check-degradation", "--n", "2", "--k", "2", "--grid", "0,0.5,1"]) == 0
    assert "ratio" in json.loads(capsys.readouterr().out)


def test_check_indist_mixed_family(capsys):
    assert main(["check-indist", "--n", "2", "--k", "2"]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["lhs"] == pytest.approx(0.046875)
    assert result["rhs"] == pytest.approx(0.03125)
    assert result["pass"]
    assert result["family_size"] == 2


def test_check_indist_two_point_orbit_pair(capsys):
    assert main(["check-indist", "--n", "2", "--k", "2", "--source", "twopoint"]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["family_size"] == 2
    assert result["lhs"] == pytest.approx(0.0, abs=1e-15)
    assert result["ratio"] == 1.0
    assert result["flags"]["degenerate"]
    assert not result["pass"]


def test_usage_errors_exit_with_one(capsys):
    assert main(["frobnicate"]) == 1
    assert main([]) == 1
    assert main(["check-degradation", "--n", "2"]) == 1


def test_missing_config_exits_with_one(tmp_path):
    assert main(["pipeline", "--config", str(tmp_path / "nope.yaml")]) == 1


def test_invalid_config_exits_with_one(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"protocol": {"k": 0.1}}), encoding="utf-8")
    assert main(["simulate", "--config", str(path)]) == 1


def test_runtime_error_exits_with_two(tmp_path):
    path = tmp_path / "zeta.json"
    path.write_text(json.dumps({"zeta": {"alpha_remote": 0.9}}), encoding="utf-8")
    assert main(["check-indist", "--source", "zeta", "--config", str(path)]) == 2


def test_drg_state_saved_and_replayed(tmp_path, capsys):
    state = tmp_path / "drg.json"
    assert main(["drg-audit", "--steps", "2", "--save-state", str(state), "--seed", "4"]) == 0
    first = json.loads(capsys.readouterr().out)
    assert first["pass"]
    assert first["steps"] == 2
    assert state.exists()
    assert main(["drg-audit", "--state", str(state)]) == 0
    replayed = json.loads(capsys.readouterr().out)
    assert replayed["pass"]
    assert replayed["min_ratio"] == first["min_ratio"]


def test_distill_synthetic_channels(capsys):
    assert main(["distill", "--raw", "20000", "--trials", "20000", "--L", "5"]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["L"] == 5
    assert set(result["closed_form"]) >= {"accept", "err_b", "err_e"}
    assert result["distillation"]["key_len"] == 128
    assert result["distillation"]["key_match"]


def test_distill_rejects_bad_rates():
    assert main(["distill", "--eps-ab", "1.5", "--raw", "100"]) == 1


def test_pipeline_is_reproducible(config_file, tmp_path):
    first = tmp_path / "first.json"
    second = tmp_path / "second.json"
    assert main(["pipeline", "--config", config_file, "--out", str(first)]) == 0
    assert main(["pipeline", "--config", config_file, "--out", str(second)]) == 0
    assert first.read_bytes() == second.read_bytes()
    report = json.loads(first.read_text(encoding="utf-8"))
    assert report["runs"] == 60
    assert report["master_seed"] == 21


def test_seed_and_runs_override(config_file, tmp_path):
    out = tmp_path / "sim.json"
    records = tmp_path / "runs.jsonl"
    assert main(["simulate", "--config", config_file, "--seed", "5", "--runs", "12",
                 "--records", str(records), "--out", str(out)]) == 0
    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["master_seed"] == 5
    assert report["runs"] == 12
    lines = records.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 12
    assert json.loads(lines[0])["run_index"] == 0
