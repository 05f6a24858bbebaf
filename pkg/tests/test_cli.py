import json
import subprocess
import sys

import pytest

from weakhj.cli import EXIT_CONFIG, EXIT_NUMERICS, EXIT_OK, main
from weakhj.config import sample_config


def write_cfg(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def summary(out):
    return json.loads((out / "summary.json").read_text())


def test_solve_writes_fields_ledger_and_margins(tmp_path):
    cfg = write_cfg(tmp_path, sample_config("weak-linear"))
    out = tmp_path / "out"
    assert main(["solve", "--config", str(cfg), "--out", str(out), "--grid", "64"]) == EXIT_OK
    s = summary(out)
    assert s["exit_status"] == 0 and s["converged"]
    assert s["ledger"]["theta"] > 0
    assert s["iteration_bounds"]["ok"]
    assert all(r["ok"] for r in s["domination"])
    assert {"solution_1.csv", "solution_2.csv", "iteration.json"} <= set(s["files"])
    header = (out / "solution_1.csv").read_text().splitlines()[0]
    assert header == "x,value"
    assert (out / "timing.json").exists()


def test_identical_inputs_give_identical_outputs(tmp_path):
    cfg = write_cfg(tmp_path, sample_config("weak-linear"))
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main(["solve", "--config", str(cfg), "--out", str(out), "--grid", "32"]) == EXIT_OK
    for name in ("summary.json", "solution_1.csv", "solution_2.csv", "iteration.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_diagnose_flags_critical_coupling(tmp_path, capsys):
    cfg = write_cfg(tmp_path, sample_config("critical-coupling"))
    assert main(["diagnose", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
    text = capsys.readouterr().out
    assert "coupling strength chi = 1" in text
    assert "chain condition: false" in text
    assert "warning:" in text


def test_config_errors_exit_one(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["solve", "--config", str(tmp_path / "missing.json"), "--out", str(out)]) == EXIT_CONFIG
    assert summary(out)["error_kind"] == "config"
    cfg = sample_config("weak-linear")
    cfg["components"][0]["potential"] = "__import__('os')"
    assert main(["solve", "--config", str(write_cfg(tmp_path, cfg)), "--out", str(out)]) == EXIT_CONFIG
    assert main(["solve", "--out", str(out)]) == EXIT_CONFIG
    good = write_cfg(tmp_path, sample_config("weak-linear"), "good.json")
    assert main(["solve", "--config", str(good), "--out", str(out), "--grid", "4"]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_unclassified_solve_is_a_config_error(tmp_path):
    cfg = write_cfg(tmp_path, sample_config("sin-cos"))
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o"), "--grid", "32"]) == EXIT_CONFIG


def test_divergent_solve_exits_two(tmp_path):
    cfg = sample_config("weak-linear")
    cfg["coupling"]["matrix"] = [[1, -3], [-3, 1]]
    cfg["numerics"] = {"max_sweeps": 6}
    path = write_cfg(tmp_path, cfg)
    out = tmp_path / "o"
    assert main(["solve", "--config", str(path), "--out", str(out), "--grid", "32"]) == EXIT_NUMERICS
    assert summary(out)["exit_status"] == EXIT_NUMERICS


def test_evolve_json_format(tmp_path):
    cfg = sample_config("sin-cos")
    cfg["evolve"] = {"T": 0.5, "store_every": 4}
    path = write_cfg(tmp_path, cfg)
    out = tmp_path / "o"
    assert main(["evolve", "--config", str(path), "--out", str(out), "--grid", "32", "--format", "json"]) == EXIT_OK
    traj = json.loads((out / "trajectory.json").read_text())
    assert len(traj["components"]) == 2 and len(traj["t"]) == summary(out)["frames"]
    final = json.loads((out / "final.json").read_text())
    assert len(final["components"][0]) == 32


def test_critical_and_find_c0(tmp_path):
    cfg = sample_config("symmetric-critical")
    out = tmp_path / "o"
    path = write_cfg(tmp_path, cfg)
    assert main(["critical", "--config", str(path), "--out", str(out), "--grid", "32"]) == EXIT_OK
    assert (out / "eps_sequence.csv").exists()
    assert main(["find-c0", "--config", str(path), "--out", str(out), "--grid", "32"]) == EXIT_OK
    assert abs(summary(out)["c0"]) < 1e-3


def test_sweep_alpha_csv(tmp_path):
    path = write_cfg(tmp_path, sample_config("alpha-line"))
    out = tmp_path / "o"
    assert main(["sweep-alpha", "--config", str(path), "--out", str(out), "--grid", "32"]) == EXIT_OK
    lines = (out / "alpha.csv").read_text().splitlines()
    assert lines[0].startswith("c,") and len(lines) == 4


def test_demo_exx_and_chain(tmp_path, capsys):
    assert main(["demo", "exx", "--out", str(tmp_path / "e"), "--grid", "64"]) == EXIT_OK
    assert "PASS" in capsys.readouterr().out
    assert main(["demo", "chain", "--out", str(tmp_path / "c"), "--grid", "64"]) == EXIT_OK
    assert "worst cycle" in capsys.readouterr().out


def test_console_script_version():
    res = subprocess.run([sys.executable, "-m", "weakhj.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "0.1.0" in res.stdout
