import json

import pytest

from otafl.cli import main
from otafl.harness import ExperimentConfig


def test_selftest_passes(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "PASS" in out


def test_unknown_command_exits_2(capsys):
    assert main(["bogus"]) == 2


def test_unknown_flag_exits_2(capsys):
    assert main(["run", "--frobnicate", "1"]) == 2


def test_missing_config_file_exits_2(capsys):
    assert main(["run", "--config", "/nonexistent/cfg.json"]) == 2


def test_bad_config_key_exits_2(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    raw = json.loads(ExperimentConfig().to_json())
    raw["mystery"] = True
    cfg.write_text(json.dumps(raw))
    assert main(["run", "--config", str(cfg)]) == 2
    assert "config error" in capsys.readouterr().err


def test_run_writes_outputs(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    raw = json.loads(ExperimentConfig().to_json())
    raw.update(num_users=3, samples_per_user=40, dim=6, rounds=2, repetitions=2)
    cfg.write_text(json.dumps(raw))
    code = main(["run", "--config", str(cfg), "--out", str(tmp_path / "res")])
    assert code == 0
    run_id = ExperimentConfig.from_json(cfg.read_text()).run_id
    assert (tmp_path / "res" / run_id / "metrics.csv").exists()


def test_flag_overrides_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    raw = json.loads(ExperimentConfig().to_json())
    raw.update(num_users=3, samples_per_user=40, dim=6, rounds=2, repetitions=2)
    cfg.write_text(json.dumps(raw))
    code = main(
        ["run", "--config", str(cfg), "--repetitions", "1", "--out", str(tmp_path / "res")]
    )
    assert code == 0
    out = capsys.readouterr().out
    # 1 repetition x 2 rounds x 3 schemes data rows + 12 summary rows
    assert "18 rows" in out


def test_design_prints_family_and_solution(capsys):
    assert main(["design", "--k", "3", "--diag", "4"]) == 0
    out = capsys.readouterr().out
    assert "eta" in out and "R =" in out


def test_design_audit_round_trip(tmp_path, capsys):
    plan = tmp_path / "plan.json"
    assert main(["design", "--save", str(plan)]) == 0
    assert main(["audit", "--plan", str(plan), "--draws", "100000"]) == 0
    out = capsys.readouterr().out
    assert "empirical privacy-failure rate" in out


def test_audit_missing_plan_exits_2(capsys):
    assert main(["audit", "--plan", "/nonexistent/plan.json"]) == 2
