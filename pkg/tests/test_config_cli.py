import csv
import json
import subprocess
import sys

import pytest

from groundctl.cli import main
from groundctl.config import ENV_PREFIX, RunConfig, env_overrides, load_config, parse_keyvalue
from groundctl.errors import (
    EXIT_HYPOTHESIS,
    EXIT_INTEGRATION,
    EXIT_OK,
    EXIT_SOLVER,
    EXIT_VALIDATION,
    ValidationError,
)


def test_exit_codes_are_distinct():
    codes = [EXIT_OK, EXIT_VALIDATION, EXIT_HYPOTHESIS, EXIT_SOLVER, EXIT_INTEGRATION]
    assert len(set(codes)) == 5 and EXIT_OK == 0


def test_keyvalue_round_trip(tmp_path):
    cfg = RunConfig(kind="fp_neumann", truncation=12, horizons=(0.25, 0.5), nu=0.7, seed=9)
    path = tmp_path / "run.cfg"
    path.write_text(cfg.to_keyvalue())
    assert load_config(path, environ={}) == cfg


def test_json_config(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"kind": "fp_neumann", "horizons": [0.3, 0.6], "bound_checks": False}))
    cfg = load_config(path, environ={})
    assert cfg.kind == "fp_neumann" and cfg.horizons == (0.3, 0.6) and cfg.bound_checks is False


def test_precedence_file_env_flags(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("seed = 1\ntruncation = 10  # comment\n")
    env = {f"{ENV_PREFIX}SEED": "2", f"{ENV_PREFIX}TRUNCATION": "14", "OTHER": "x"}
    cfg = load_config(path, {"seed": 3}, environ=env)
    assert cfg.seed == 3 and cfg.truncation == 14


@pytest.mark.parametrize("text", ["bogus = 1", "seed = 1\nseed = 2", "no equals sign", "seed = x"])
def test_bad_files_are_rejected(tmp_path, text):
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    with pytest.raises(ValidationError):
        load_config(path, environ={})


def test_bad_env_and_values():
    with pytest.raises(ValidationError):
        env_overrides({f"{ENV_PREFIX}NOPE": "1"})
    with pytest.raises(ValidationError):
        RunConfig(mode="fast")
    with pytest.raises(ValidationError):
        RunConfig(dt=3e-4, sde_T=1.0)
    with pytest.raises(ValidationError):
        RunConfig(kind="degenerate_dirichlet", alpha=2.5)
    assert parse_keyvalue("# only a comment\n\n") == {}


def _cli(tmp_path, *args):
    return main([args[0], "--out", str(tmp_path), *args[1:]])


def test_spectrum_command(tmp_path):
    assert _cli(tmp_path, "spectrum", "--set", "truncation=8") == 0
    rows = list(csv.DictReader(open(tmp_path / "spectrum.csv")))
    assert len(rows) == 8 and float(rows[0]["eigenvalue"]) > 0
    hyp = json.loads((tmp_path / "hypotheses.json").read_text())
    assert hyp["ok"] is True
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["command"] == "spectrum" and man["status"] == "ok" and man["config"]["truncation"] == 8


def test_null_control_command(tmp_path):
    args = ["--set", "truncation=8", "--set", "horizons=0.4,0.6,0.8", "--set", "cost_trials=8", "--threads", "2"]
    assert _cli(tmp_path, "null-control", *args) == 0
    rows = list(csv.DictReader(open(tmp_path / "cost_curve.csv")))
    assert [float(r["T"]) for r in rows] == [0.4, 0.6, 0.8]
    assert max(float(r["verified_residual"]) for r in rows) < 1e-6
    assert json.loads((tmp_path / "cost_fit.json").read_text())["nu_hat"] > 0


def test_control_loop_command(tmp_path):
    assert _cli(tmp_path, "control-loop", "--set", "truncation=10", "--seed", "4") == 0
    trace = json.loads((tmp_path / "trace.json").read_text())
    assert trace["converged"] and trace["summary"]["bound_violations"] == []
    assert (tmp_path / "control.csv").exists() and (tmp_path / "constants.json").exists()


def test_control_loop_failure_keeps_partial_trace(tmp_path):
    code = _cli(tmp_path, "control-loop", "--set", "kind=fp_neumann", "--set", "perturb=mode",
                "--set", "perturb_size=1.65", "--set", "horizon=1", "--set", "bound_checks=false")
    assert code == EXIT_SOLVER
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["status"] == "failed" and man["error"]["type"] == "DivergenceError"
    assert json.loads((tmp_path / "trace.json").read_text())["failure"]


def test_semiglobal_commands(tmp_path):
    assert _cli(tmp_path / "a", "semiglobal", "--set", "truncation=10", "--set", "r1=1e-2") == 0
    res = json.loads((tmp_path / "a" / "semiglobal.json").read_text())
    assert res["T_dwell"] > 0
    assert _cli(tmp_path / "b", "semiglobal", "--set", "truncation=10", "--set", "r1=1e-2",
                "--set", "variant=cone", "--set", "cone_scale=-2") == 0
    assert _cli(tmp_path / "c", "semiglobal", "--set", "perturb_ground=0.5", "--set", "r1=1e-2") == EXIT_HYPOTHESIS


def test_sde_and_report(tmp_path):
    args = ["--set", "kind=fp_neumann", "--set", "n_particles=4000", "--set", "dt=1e-3", "--set", "sde_T=0.1"]
    assert _cli(tmp_path / "s", "sde", *args) == 0
    res = json.loads((tmp_path / "s" / "sde.json").read_text())
    assert res["l1"] < 0.2 and res["ensemble"]["alive"] == 4000
    assert _cli(tmp_path / "d", "sde", *args[:2], "--set", "kind=fp_dirichlet", *args[2:]) == 0
    assert json.loads((tmp_path / "d" / "sde.json").read_text())["regime"] == "absorb"
    assert _cli(tmp_path / "x", "sde", *args, "--set", "dt=0.5", "--set", "sde_T=1") == EXIT_INTEGRATION
    assert _cli(tmp_path, "report") == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert {r["status"] for r in rep["runs"]} == {"ok", "failed"} and len(rep["runs"]) == 3
    assert "| s | sde | ok |" in (tmp_path / "report.md").read_text()


def test_validation_exit_code(tmp_path):
    assert _cli(tmp_path, "spectrum", "--set", "bogus=1") == EXIT_VALIDATION
    assert _cli(tmp_path, "spectrum", "--set", "novalue") == EXIT_VALIDATION
    assert _cli(tmp_path, "sde", "--set", "kind=heat_neumann_drift") == EXIT_VALIDATION


def test_module_entry_point_and_env(tmp_path):
    env = {"PATH": "/usr/bin:/bin", f"{ENV_PREFIX}TRUNCATION": "bad"}
    r = subprocess.run([sys.executable, "-m", "groundctl", "spectrum", "--out", str(tmp_path)],
                       capture_output=True, text=True, env=env)
    assert r.returncode == EXIT_VALIDATION and "truncation" in r.stderr
    r = subprocess.run([sys.executable, "-m", "groundctl", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and ENV_PREFIX in r.stdout
