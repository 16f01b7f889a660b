import json
import os

import numpy as np
import pytest

from horndiff.cli import (ConfigError, build_experiment, build_objects,
                          load_config, main)
from horndiff.experiments import exp_lln

STRIP_TOML = """
[domain]
d = 1
a0 = 1.0
alpha_cusp = 0.5
a_inf = 1.0
beta = 0.0
x_lo = 0.5
x_hi = 2.0

[covariance]
kind = "isotropic"
v = 1.0
delta = 0.5

[reflection]
s0 = 1.0
c0 = 1.0

[step]
dt_max = 1e-3
eta = 0.01
record_stride = 100

[experiment]
name = "lln"
n_paths = 8
seed = 42
t_horizon = 20.0
"""


@pytest.fixture
def strip_config(tmp_path):
    p = tmp_path / "strip.toml"
    p.write_text(STRIP_TOML)
    return str(p)


def test_load_and_build(strip_config):
    raw = load_config(strip_config)
    profile, cov, refl, step = build_objects(raw)
    assert profile.beta == 0.0
    assert cov.sigma_sq_limit == 1.0
    assert refl.s0 == 1.0
    assert step.dt_max == 1e-3


def test_unknown_key_rejected(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text(STRIP_TOML.replace("dt_max = 1e-3", "dt_mx = 1e-3"))
    with pytest.raises(ConfigError, match="unknown key"):
        load_config(str(p))


def test_malformed_toml_exit_2(tmp_path):
    p = tmp_path / "broken.toml"
    p.write_text("[domain\nd = ")
    assert main(["--config", str(p), "check"]) == 2


def test_check_passes_on_strip(strip_config, capsys):
    assert main(["--config", strip_config, "check"]) == 0
    out = capsys.readouterr().out
    assert "pass" in out and "FAIL" not in out


def test_check_fails_on_beta_above_one(tmp_path, capsys):
    p = tmp_path / "wedgeish.toml"
    p.write_text(STRIP_TOML.replace("beta = 0.0", "beta = 1.2"))
    assert main(["--config", str(p), "check"]) == 1
    assert "beta < 1" in capsys.readouterr().out


def test_check_fails_on_zero_s0(tmp_path, capsys):
    p = tmp_path / "saz.toml"
    p.write_text(STRIP_TOML.replace("s0 = 1.0", "s0 = 0.0"))
    assert main(["--config", str(p), "check"]) == 1
    out = capsys.readouterr().out
    assert "s0" in out


def test_simulate_empty_horizon(tmp_path, strip_config):
    p = tmp_path / "zero.toml"
    p.write_text(STRIP_TOML.replace('t_horizon = 20.0', 't_horizon = 0.0')
                 .replace("n_paths = 8", "n_paths = 1"))
    out = tmp_path / "out0"
    rc = main(["--config", str(p), "--threads", "1", "--out", str(out),
               "simulate"])
    assert rc == 0
    lines = (out / "trajectories.jsonl").read_text().strip().splitlines()
    assert len(lines) == 1  # manifest header only, no samples
    assert "manifest" in lines[0]


def test_simulate_deterministic_bytes(tmp_path, strip_config):
    p = tmp_path / "sim.toml"
    p.write_text(STRIP_TOML.replace("t_horizon = 20.0", "t_horizon = 2.0"))
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        rc = main(["--config", str(p), "--threads", "2", "--out", str(out),
                   "simulate"])
        assert rc == 0
        outs.append((out / "trajectories.jsonl").read_bytes()
                    + (out / "summary.csv").read_bytes())
    assert outs[0] == outs[1]


def test_simulate_row_count(tmp_path):
    p = tmp_path / "rows.toml"
    p.write_text(STRIP_TOML.replace("n_paths = 8", "n_paths = 20")
                 .replace("t_horizon = 20.0", "t_horizon = 1.0"))
    out = tmp_path / "rows_out"
    assert main(["--config", str(p), "--out", str(out), "simulate"]) == 0
    rows = (out / "summary.csv").read_text().strip().splitlines()
    assert len(rows) == 21  # header + one per path


def test_manifest_written_and_referenced(tmp_path, strip_config):
    out = tmp_path / "m"
    assert main(["--config", strip_config, "--out", str(out),
                 "simulate"]) == 0
    man = json.loads((out / "manifest.json").read_text())
    h = man["manifest_hash"]
    assert h in (out / "summary.csv").read_text()


def test_experiment_unknown_name(strip_config):
    assert main(["--config", strip_config, "experiment", "frobnicate"]) == 2


def test_no_command_usage(strip_config):
    assert main(["--config", strip_config]) == 2


def test_experiment_ode_outputs(tmp_path, strip_config):
    out = tmp_path / "ode"
    rc = main(["--config", strip_config, "--out", str(out),
               "experiment", "ode"])
    assert rc == 0
    assert (out / "results.csv").exists()
    assert (out / "curves" / "t_vs_B_X.csv").exists()


def test_experiment_matches_library(tmp_path, strip_config):
    out = tmp_path / "lln"
    rc = main(["--config", strip_config, "--threads", "1", "--out", str(out),
               "experiment", "lln"])
    assert rc == 0
    raw = load_config(strip_config)
    profile, cov, refl, step = build_objects(raw)
    _, cfg = build_experiment(raw, profile, cov, refl, step, threads=1)
    res = exp_lln(cfg)
    text = (out / "results.csv").read_text()
    mean = res.estimates["X_over_t"].mean
    assert repr(mean) in text  # identical numbers through both paths


def test_experiment_gate_violation(tmp_path):
    p = tmp_path / "gated.toml"
    p.write_text(STRIP_TOML.replace(
        'name = "lln"', 'name = "lln"\ngate = { rel_tol = 1e-6 }'))
    out = tmp_path / "g"
    rc = main(["--config", str(p), "--threads", "1", "--out", str(out),
               "experiment", "lln"])
    assert rc == 1  # a 1e-6 tolerance cannot hold at this sample size


def test_diagnose_emits_verdicts(tmp_path):
    p = tmp_path / "diag.toml"
    p.write_text(STRIP_TOML + "\n[lyapunov]\ngamma = [0.25, 2.0]\nx1 = 10.0\n"
                 + "theta_margin = 0.2\n")
    # longer horizon so the drift statistics resolve at 3 sigma
    text = p.read_text().replace("t_horizon = 20.0", "t_horizon = 200.0")
    text = text.replace("n_paths = 8", "n_paths = 48")
    p.write_text(text)
    out = tmp_path / "d"
    rc = main(["--config", str(p), "--threads", "2", "--out", str(out),
               "diagnose"])
    assert rc == 0
    data = json.loads((out / "diagnostics.json").read_text())
    verdicts = {d["gamma"]: d["verdict"] for d in data["drift"]}
    assert verdicts[2.0] == "consistent-with-supermartingale"
    assert verdicts[0.25] == "consistent-with-submartingale"
    assert 0.5 < data["qv"]["qv_exponent"] < 1.4
