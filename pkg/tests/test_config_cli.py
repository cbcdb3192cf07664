import csv
import io

import numpy as np
import pytest
import yaml

from baskettrial import cli
from baskettrial.config import dump_config, load_cutoffs, parse_config, parse_config_text
from baskettrial.divergence import DistanceMeasure, distance_matrix
from baskettrial.errors import ChainFailure, ConfigError
from baskettrial.inference import GammaPrior, InvGammaPrior

FAST = """
mcmc:
  burn_in: 100
  keep: 200
simulation:
  replicates: 20
  seed: 5
"""


def _cfg(tmp_path, name, body):
    p = tmp_path / name
    p.write_text(body + FAST + f"output:\n  dir: {tmp_path / 'out'}\n")
    return p


# -- configuration -------------------------------------------------------------

def test_minimal_config_defaults():
    cfg = parse_config_text("method: cbhm\nI: 6\n", "min.yaml")
    echo = yaml.safe_load(dump_config(cfg))
    assert echo["scenario"]["q0"] == 0.2 and echo["scenario"]["q1"] == 0.4
    assert echo["scenario"]["truth"] == [0.2] * 6
    assert echo["design"] == {"n1": 14, "n": 24, "Qf": 0.05}
    assert echo["mcmc"]["burn_in"] == 5000 and echo["mcmc"]["keep"] == 10000
    spec = cfg.methods[0].spec()
    assert spec.measure is DistanceMeasure.BHATTACHARYYA
    assert spec.phi_prior == GammaPrior(1.0, 1.0)
    assert cfg.label(cfg.methods[0]) == "CBHM-B"


def test_rate_ordering_is_config_error():
    with pytest.raises(ConfigError, match=r"bad\.yaml:3: scenario"):
        parse_config_text("method: cbhm\nscenario:\n  q0: 0.4\n  q1: 0.2\n", "bad.yaml")


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError, match=r"bad\.yaml:4: mcmc\.burnin"):
        parse_config_text("method: cbhm\nI: 6\nmcmc:\n  burnin: 3\n", "bad.yaml")
    with pytest.raises(ConfigError):
        parse_config_text("methods:\n  - model: cbhm\n    measure: tv\n", "bad.yaml")
    with pytest.raises(ConfigError):
        parse_config_text("scenario: [1, 2\n", "bad.yaml")


def test_prior_set_three_echo():
    cfg = parse_config_text("methods:\n  - model: cbhm\n    prior_set: 3\nI: 6\n", "p3.yaml")
    m = yaml.safe_load(dump_config(cfg))["methods"][0]
    assert m["sigma2_prior"] == {"dist": "invgamma", "a": 0.001, "b": 0.001}
    assert m["tau2_prior"] == {"dist": "invgamma", "a": 0.001, "b": 0.001}
    assert m["phi_prior"] == {"dist": "gamma", "a": 1.0, "b": 1.0}
    spec = cfg.methods[0].spec()
    assert spec.sigma2_prior == InvGammaPrior(0.001, 0.001)


def test_hellinger_and_shape_override():
    cfg = parse_config_text("methods:\n  - {model: cbhm, measure: h}\n"
                            "  - {model: cbhm, measure: b, phi_shape: 0.7, label: B07}\n", "h.yaml")
    assert cfg.methods[0].spec().phi_prior == GammaPrior(1.5, 1.0)
    assert cfg.methods[1].spec().phi_prior == GammaPrior(0.7, 1.0)


def test_vector_lengths_and_duplicates():
    with pytest.raises(ConfigError):
        parse_config_text("scenario:\n  I: 3\n  truth: [0.2, 0.4]\n", "v.yaml")
    with pytest.raises(ConfigError):
        parse_config_text("methods: [{model: bhm}, {model: bhm}]\n", "v.yaml")
    cfg = parse_config_text("scenario:\n  truth: [0.2, 0.4, 0.4]\n  q0: [0.2, 0.2, 0.3]\n"
                            "  q1: 0.5\nmethod: bhm\n", "v.yaml")
    assert cfg.truth == (0.2, 0.4, 0.4) and cfg.scenario.I == 3


def test_load_cutoffs_formats(tmp_path):
    a = tmp_path / "a.yaml"
    a.write_text("cutoffs:\n  BHM: {Q: 0.9}\n")
    b = tmp_path / "b.yaml"
    b.write_text("BHM: 0.85\n")
    assert load_cutoffs(a) == {"BHM": 0.9}
    assert load_cutoffs(b) == {"BHM": 0.85}
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "missing.yaml")


# -- command line ----------------------------------------------------------------

def test_distance_command(capsys):
    assert cli.main(["distance", "--n", "24", "--r", "10,0", "--measure", "all"]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0] == ["i", "j", "n_i", "r_i", "n_j", "r_j", "B", "H", "KL"]
    vals = [float(v) for v in rows[1][6:]]
    for m, v in zip(DistanceMeasure, vals):
        assert v == pytest.approx(distance_matrix(m, [24, 24], [10, 0])[0, 1], abs=1e-6)


def test_distance_sweep_and_correlation(capsys):
    assert cli.main(["distance", "--r", "10", "--sweep", "--measure", "h"]) == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 26
    assert cli.main(["distance", "--r", "10,0,20", "--phi", "1.0"]) == 0
    assert "correlation (B, exp, phi=1)" in capsys.readouterr().out


def test_calibrate_phi_command(capsys):
    assert cli.main(["calibrate-phi", "--measure", "b", "--corr", "exp", "--M", "1000"]) == 0
    out = yaml.safe_load(capsys.readouterr().out)
    lo, hi = out["a_interval"]
    assert lo == pytest.approx(-np.log(0.5) / out["d_t"], abs=1e-5)
    assert hi == pytest.approx(-np.log(0.3) / out["d_t"], abs=1e-5)
    assert out["phi_shape"] == 1.0


def test_exit_codes(tmp_path, capsys, monkeypatch):
    assert cli.main(["frobnicate"]) == cli.EXIT_USAGE
    assert cli.main([]) == cli.EXIT_USAGE
    bad = tmp_path / "bad.yaml"
    bad.write_text("method: bhm\nscenario:\n  q0: 0.4\n  q1: 0.2\n")
    assert cli.main(["simulate", "--config", str(bad)]) == cli.EXIT_CONFIG
    assert cli.main(["calibrate-phi", "--q0", "1e-12", "--q1", "2e-12", "--M", "1000"]) \
        == cli.EXIT_CALIBRATION
    data = tmp_path / "d.csv"
    data.write_text("indication,n,r\na,24,5\nb,24,9\n")

    def boom(*a, **k):
        raise ChainFailure("boom")
    monkeypatch.setattr(cli, "fit_model", boom)
    assert cli.main(["fit", "--data", str(data), "--model", "bhm"]) == cli.EXIT_CHAIN


def test_simulate_writes_table_and_reproduces(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = _cfg(tmp_path, "null.yaml", "methods:\n  - {model: independent, Q: 0.9}\n"
                                      "  - {model: bhm, Q: 0.9}\nI: 4\n")
    assert cli.main(["simulate", "--config", str(cfg), "--long"]) == 0
    out = tmp_path / "out"
    first = (out / "oc_null.csv").read_bytes()
    rows = list(csv.reader(io.StringIO(first.decode())))
    assert rows[0][:3] == ["Scenario", "Method", "Metric"] and rows[1][0] == "null"
    assert "% Perfect" in rows[0] and "# TP" in rows[0]
    assert (out / "replicates_null.csv").exists()
    echoed = tmp_path / "echo.yaml"
    echoed.write_bytes((out / "effective_config.yaml").read_bytes())
    assert cli.main(["simulate", "--config", str(echoed)]) == 0
    assert (out / "oc_null.csv").read_bytes() == first
    assert sorted(p.name for p in tmp_path.iterdir()) == ["echo.yaml", "null.yaml", "out"]


def test_calibrate_then_simulate(tmp_path, capsys):
    cfg = _cfg(tmp_path, "s2.yaml", "method: independent\nscenario:\n  truth: [0.4, 0.2, 0.2]\n")
    assert cli.main(["simulate", "--config", str(cfg)]) == cli.EXIT_CONFIG
    assert cli.main(["calibrate-q", "--config", str(cfg), "--cal-replicates", "200"]) == 0
    cal = tmp_path / "out" / "calibration.yaml"
    Q = load_cutoffs(cal)["Independent"]
    assert 0 < Q < 1
    assert cli.main(["simulate", "--config", str(cfg), "--calibration", str(cal)]) == 0
    text = (tmp_path / "out" / "oc_s2.csv").read_text()
    assert f"{Q:.4f}" in text


def test_fit_and_trial_commands(tmp_path, capsys):
    data = tmp_path / "d.csv"
    data.write_text("indication,n,r\na,24,5\nb,24,9\nc,14,2\n")
    cfg = _cfg(tmp_path, "t.yaml", "methods:\n  - {model: bhm}\n  - {model: liu}\n"
                                   "scenario:\n  truth: [0.2, 0.4, 0.4]\n")
    assert cli.main(["fit", "--data", str(data), "--config", str(cfg)]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0] == ["indication", "n", "r", "mean", "sd", "prob_exceeds_q0", "rhat"]
    assert [r[0] for r in rows[1:]] == ["a", "b", "c"]
    assert cli.main(["trial", "--config", str(cfg), "--Q", "0.9", "--replicate", "3"]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert len(rows) == 1 + 2 * 3
    assert {r[0] for r in rows[1:]} == {"BHM", "Liu"}


def test_compare_command(tmp_path, capsys):
    a = _cfg(tmp_path, "a.yaml", "methods: [{model: independent, Q: 0.9}]\nI: 3\n")
    b = _cfg(tmp_path, "b.yaml", "methods: [{model: bhm, Q: 0.9}]\nI: 3\n")
    c = _cfg(tmp_path, "c.yaml", "methods: [{model: bhm, Q: 0.9}]\nI: 4\n")
    assert cli.main(["compare", "--config", str(a), str(b)]) == 0
    out = capsys.readouterr().out
    assert "Independent" in out and "BHM" in out
    assert cli.main(["compare", "--config", str(a), str(c)]) == cli.EXIT_CONFIG


def test_threads_flag_identical(tmp_path):
    cfg = _cfg(tmp_path, "th.yaml", "methods: [{model: bhm, Q: 0.9}]\nI: 3\n")
    assert cli.main(["simulate", "--config", str(cfg)]) == 0
    one = (tmp_path / "out" / "oc_th.csv").read_bytes()
    assert cli.main(["simulate", "--config", str(cfg), "--threads", "2"]) == 0
    assert (tmp_path / "out" / "oc_th.csv").read_bytes() == one
