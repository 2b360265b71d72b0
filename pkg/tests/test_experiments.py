import json
import math
import os

import numpy as np
import pytest

from fragbec.cli import main
from fragbec.experiments import (ConfigError, RateFit, config_hash, fit_rate,
                                 load_config, run_experiment)


def test_fit_rate_pure_power_law():
    points = [(n, 1.0 / n) for n in (8, 16, 32, 64, 128)]
    fit = fit_rate(points)
    assert abs(fit.slope + 1.0) < 1e-12
    assert fit.residual_rms < 1e-12


def test_fit_rate_constant():
    fit = fit_rate([(n, 3.0) for n in (8, 16, 32, 64)])
    assert abs(fit.slope) < 1e-12


def test_fit_rate_with_correction_term():
    points = [(n, 1.0 / n + 5.0 / n**2) for n in (64, 128, 256, 512, 1024,
                                                  2048, 4096)]
    fit = fit_rate(points)
    assert -1.02 <= fit.slope <= -0.98


def test_fit_rate_validation():
    with pytest.raises(ValueError):
        fit_rate([(1, 1.0), (2, 0.5), (3, 0.25)])
    with pytest.raises(ValueError):
        fit_rate([(1, 1.0), (2, 0.5), (3, 0.25), (4, -0.1)])


def test_config_defaults_valid():
    config = load_config()
    assert config["experiment"]["kind"] == "verify"
    assert config_hash(config) == config_hash(load_config())


def test_config_rejects_unknown_keys(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[model]\nbogus = 3\n")
    with pytest.raises(ConfigError, match="unknown key"):
        load_config(str(bad))


def test_config_rejects_bad_values(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[model]\nnu = -1.0\n")
    with pytest.raises(ConfigError):
        load_config(str(bad))
    bad.write_text("[fragmentation]\nfractions = [0.5, 0.6]\n")
    with pytest.raises(ConfigError, match="sum to 1"):
        load_config(str(bad))
    bad.write_text("not toml at all [ [")
    with pytest.raises(ConfigError, match="TOML"):
        load_config(str(bad))


def test_verify_experiment_passes():
    config = load_config(overrides={"experiment": {"kind": "verify"}})
    report = run_experiment(config)
    assert report.passed
    assert report.columns == ["check", "value", "passed"]


def test_marginal_rates_report():
    config = load_config(overrides={"experiment": {"kind": "marginal-rates"}})
    report = run_experiment(config)
    assert report.passed
    slopes = [v for k, v in report.fitted.items() if k.startswith("slope")]
    assert all(abs(s + 1.0) <= 0.05 for s in slopes)


def test_cli_verify_and_outputs(tmp_path):
    out = tmp_path / "run"
    code = main(["verify", "--out", str(out)])
    assert code == 0
    csv_path = out / "verify.csv"
    summary_path = out / "summary.json"
    assert csv_path.exists() and summary_path.exists()
    header = csv_path.read_text().splitlines()[0]
    assert header == "check,value,passed"
    summary = json.loads(summary_path.read_text())
    assert summary["passed"] is True
    assert summary["kind"] == "verify"
    assert "config_hash" in summary and "git_describe" in summary


def test_cli_marginal_rates_csv_schema_and_determinism(tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    small = tmp_path / "cfg.toml"
    small.write_text("[experiment]\n"
                     "N_list = [8, 16, 32, 64, 128, 256, 512, 1024]\n"
                     "k_list_marginal = [1, 2]\n")
    assert main(["rates", "--kind", "marginal", "--config", str(small),
                 "--out", str(out_a), "--seed", "1"]) == 0
    assert main(["rates", "--kind", "marginal", "--config", str(small),
                 "--out", str(out_b), "--seed", "1"]) == 0
    csv_a = (out_a / "marginal-rates.csv").read_bytes()
    csv_b = (out_b / "marginal-rates.csv").read_bytes()
    assert csv_a == csv_b
    header = csv_a.decode().splitlines()[0]
    assert header == "N,k,distance_exact_vs_mixture,fitted_ak_over_N"


def test_cli_meanfield_schema(tmp_path):
    out = tmp_path / "mf"
    cfg = tmp_path / "cfg.toml"
    cfg.write_text("""
[model]
d = 2
[time]
sample_times = [0.25]
dt = 0.002
[experiment]
N_list_manybody = [4, 6, 8, 10]
k_list = [1]
""")
    code = main(["manybody", "--config", str(cfg), "--out", str(out)])
    assert code == 0
    lines = (out / "meanfield-rates.csv").read_text().splitlines()
    assert lines[0] == "N,k,t,nu,trace_distance"
    assert len(lines) == 5


def test_cli_malformed_config_exit_2_no_partial_output(tmp_path, capsys):
    out = tmp_path / "never"
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[model]\nnu = -1.0\n")
    code = main(["verify", "--config", str(cfg), "--out", str(out)])
    assert code == 2
    assert not out.exists()
    cfg.write_text("[model\nbroken toml")
    assert main(["verify", "--config", str(cfg), "--out", str(out)]) == 2
    assert not out.exists()
    assert main(["verify", "--config", str(tmp_path / "missing.toml"),
                 "--out", str(out)]) == 2
    assert not out.exists()


def test_cli_infinite_gap(tmp_path):
    out = tmp_path / "ig"
    cfg = tmp_path / "cfg.toml"
    cfg.write_text("[quadrature]\nm_theta = 8\n[time]\nT = 0.5\ndt = 0.002\n")
    code = main(["infinite-gap", "--config", str(cfg), "--out", str(out)])
    assert code == 0
    lines = (out / "infinite-gap.csv").read_text().splitlines()
    assert lines[0] == "t,K11,K22,absK12,rank"


def test_worker_env_does_not_change_results(tmp_path, monkeypatch):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text("[experiment]\nnu_list = [10, 20, 40, 80]\n[time]\nT = 0.25\n")
    out_a, out_b = tmp_path / "w1", tmp_path / "w2"
    monkeypatch.setenv("FRAGBEC_WORKERS", "1")
    assert main(["rates", "--kind", "nu", "--config", str(cfg),
                 "--out", str(out_a)]) == 0
    monkeypatch.setenv("FRAGBEC_WORKERS", "2")
    assert main(["rates", "--kind", "nu", "--config", str(cfg),
                 "--out", str(out_b)]) == 0
    assert (out_a / "nu-rates.csv").read_bytes() == \
        (out_b / "nu-rates.csv").read_bytes()


def test_cli_unwritable_out_dir(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code = main(["verify", "--out", str(blocker / "sub")])
    assert code == 1
