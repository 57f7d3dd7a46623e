from __future__ import annotations

import json

import pytest

from vstab.cli import DEFAULTS, load_config, run

LINEAR = {"system": {"name": "linear-delay", "a": 0.0, "b": -1.0},
          "space": {"input_amplitude": 0.0, "sample_count": 5}}


def write_config(tmp_path, cfg):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def report(out):
    return json.loads((out / "report.json").read_text())


def test_version(capsys):
    assert run(["--version"]) == 0


def test_simulate_oracle(tmp_path):
    cfg = dict(LINEAR, params={"constant": 1.0})
    out = tmp_path / "sim"
    code = run(["simulate", "--config", write_config(tmp_path, cfg), "--T", "2", "--output-dir", str(out)])
    assert code == 0
    last = (out / "trajectory.csv").read_text().strip().splitlines()[-1]
    t, x = (float(v) for v in last.split(","))
    assert t == 2.0 and x == pytest.approx(-0.5, abs=1e-6)
    assert (out / "lkf_trace.csv").exists()
    rep = report(out)
    assert rep["pass"] and rep["schema_version"] == 1 and rep["command"] == "simulate"


def test_certify_pass(tmp_path):
    out = tmp_path / "ok"
    code = run(["certify", "--kind", "ugs", "--samples", "10", "--output-dir", str(out)])
    assert code == 0 and report(out)["result"]["condition_id"] == "UGS-LKF"


def test_certify_violation_exit_code(tmp_path):
    cfg = {"system": {"name": "zero"}, "alpha": "identity", "chi": "identity",
           "space": {"sample_count": 10}}
    out = tmp_path / "bad"
    code = run(["certify", "--config", write_config(tmp_path, cfg), "--kind", "diss-pointwise",
                "--output-dir", str(out)])
    assert code == 1
    rep = report(out)
    assert not rep["pass"] and rep["result"]["violations"]


def test_falsify_writes_witness(tmp_path):
    cfg = {"system": {"name": "zero"}, "chi": "identity"}
    out = tmp_path / "fz"
    code = run(["falsify", "--config", write_config(tmp_path, cfg), "--kind", "ugs", "--budget", "200",
                "--output-dir", str(out)])
    assert code == 1 and (out / "witness_history.csv").exists()


def test_missing_kind_is_error(tmp_path, capsys):
    code = run(["certify", "--output-dir", str(tmp_path / "e")])
    assert code == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["command"] == "certify" and "kind" in err["message"]


@pytest.mark.parametrize("cfg", [{"system": {"name": "nope"}}, {"lkf": {"family": "nope"}},
                                 {"seed": "x"}, {"alpha": {"name": "nope"}}])
def test_bad_configs(tmp_path, cfg):
    args = ["certify", "--kind", "impl-pointwise", "--samples", "2", "--config", write_config(tmp_path, cfg),
            "--output-dir", str(tmp_path / "o")]
    assert run(args) == 2


def test_unreadable_config(tmp_path):
    assert run(["lkf-eval", "--config", str(tmp_path / "missing.json"), "--output-dir", str(tmp_path)]) == 2


def test_bad_threads(tmp_path):
    assert run(["lkf-eval", "--threads", "0", "--output-dir", str(tmp_path)]) == 2


def test_unknown_flag():
    assert run(["lkf-eval", "--bogus"]) == 2


def test_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("VSTAB_OUTPUT_DIR", str(tmp_path / "env"))
    assert run(["lkf-eval", "--samples", "3"]) == 0
    rep = report(tmp_path / "env")
    assert rep["result"]["count"] == 3 and rep["threads"] == 1


def test_flags_override_file(tmp_path):
    path = write_config(tmp_path, {"seed": 5, "space": {"sample_count": 9}})
    cfg = load_config(path, {"seed": 7, "params": {}})
    assert cfg["seed"] == 7 and cfg["space"]["sample_count"] == 9
    assert cfg["space"]["history_amplitude"] == DEFAULTS["space"]["history_amplitude"]


def test_estimate_cep(tmp_path):
    cfg = {"system": {"name": "zero"},
           "space": {"history_generator": "constants", "input_amplitude": 0.0, "sample_count": 3}}
    out = tmp_path / "cep"
    code = run(["estimate", "--config", write_config(tmp_path, cfg), "--property", "cep", "--eps", "0.5",
                "--h", "1", "--step", "0.05", "--output-dir", str(out)])
    assert code == 0 and report(out)["result"]["details"]["delta_hat"] == pytest.approx(0.5, rel=1e-6)


def test_estimate_ulim(tmp_path):
    out = tmp_path / "ulim"
    code = run(["estimate", "--config", write_config(tmp_path, dict(LINEAR, system={"name": "linear-delay",
                                                                                   "a": -1.0, "b": 0.0})),
                "--property", "ulim", "--r", "1", "--eps", "0.1", "--T", "8", "--step", "0.05",
                "--output-dir", str(out)])
    rep = report(out)
    assert code == 0 and len(rep["result"]["times"]) == 5 and not any(rep["result"]["censored"])


def test_example_item(tmp_path):
    out = tmp_path / "ex"
    assert run(["example", "--item", "iv", "--output-dir", str(out)]) == 0
    assert report(out)["verdict"] == "expected-fail-confirmed"


def test_reports_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run(["certify", "--kind", "impl-pointwise", "--samples", "5", "--seed", "3",
                    "--output-dir", str(out)]) in (0, 1)
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
