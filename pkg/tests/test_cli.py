import json
from pathlib import Path

import numpy as np
import pytest

from weakam.cli import run

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def cfg(name):
    return str(CONFIGS / name)


def test_solve_then_verify(tmp_path, capsys):
    out = tmp_path / "u.json"
    assert run(["solve", "--config", cfg("free_damped.toml"), "--nx", "64", "--nt", "32",
                "--out", str(out), "--csv", str(tmp_path / "u.csv")]) == 0
    data = json.loads(out.read_text())
    assert np.max(np.abs(np.array(data["values"]) - 1.75)) <= 1e-8
    assert (tmp_path / "u.csv").read_text().startswith("x,t,u")
    assert run(["verify", "--config", cfg("free_damped.toml"), "--nx", "64", "--nt", "32",
                "--u", str(out), "--n-paths", "200"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_verify_flags_corrupted_field(tmp_path, capsys):
    out = tmp_path / "u.json"
    args = ["--config", cfg("free_damped.toml"), "--nx", "64", "--nt", "32"]
    assert run(["solve", *args, "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    data["values"][5 * 32 + 3] += 1e-3  # flat, x-major
    out.write_text(json.dumps(data))
    assert run(["verify", *args, "--u", str(out), "--n-paths", "200"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_solve_is_deterministic(tmp_path):
    paths = [tmp_path / f"u{k}.json" for k in range(2)]
    for p in paths:
        assert run(["solve", "--config", cfg("free_damped.toml"), "--nx", "64", "--nt", "32", "--out", str(p)]) == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_critical(tmp_path):
    out = tmp_path / "critical.json"
    assert run(["critical", "--config", cfg("free_critical.toml"), "--out", str(out),
                "--barrier-csv", str(tmp_path / "b.csv")]) == 0
    data = json.loads(out.read_text())
    assert data["c_H"] == pytest.approx(0.125, abs=1e-12)
    assert data["rotation"] == pytest.approx(0.5)
    assert abs(data["c_H_drift"] - 0.125) <= 1e-6
    assert (tmp_path / "b.csv").exists()


def test_critical_rejects_dissipative_model(tmp_path, capsys):
    assert run(["critical", "--config", cfg("pendulum.toml"), "--nx", "32", "--nt", "16",
                "--out", str(tmp_path / "c.json")]) == 3
    assert "requires [f]=0" in capsys.readouterr().err


def test_missing_config_exits_2(tmp_path, capsys):
    assert run(["solve", "--config", str(tmp_path / "nope.toml")]) == 2
    assert "not found" in capsys.readouterr().err


def test_bad_config_value_exits_2(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text('[model]\npreset = "double_pendulum"\n')
    assert run(["solve", "--config", str(bad)]) == 2


def test_simulate_and_staircase_deterministic(tmp_path):
    outs = []
    for k in range(2):
        t = tmp_path / f"t{k}.csv"
        s = tmp_path / f"s{k}.csv"
        assert run(["simulate", "--config", cfg("pendulum.toml"), "--x0", "0.1", "--p0", "0.5",
                    "--T", "2", "--dt", "0.01", "--out", str(t)]) == 0
        assert run(["staircase", "--config", cfg("pendulum.toml"), "--c-min", "0", "--c-max", "1",
                    "--c-step", "0.25", "--T", "20", "--transient", "10", "--threads", str(k + 1),
                    "--out", str(s)]) == 0
        outs.append((t.read_bytes(), s.read_bytes()))
    assert outs[0] == outs[1]
    header = outs[0][0].decode().splitlines()[0]
    assert header == "t,x,p,I,u,F,Hhat"
    assert outs[0][1].decode().splitlines()[0] == "c,rho,bound,plateau_id"
    assert len(outs[0][1].decode().splitlines()) == 6


def test_limit(tmp_path):
    out = tmp_path / "limit.json"
    assert run(["limit", "--config", cfg("pendulum_limit.toml"), "--nx", "64", "--nt", "32",
                "--deltas", "0.4,0.2,0.1", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["c_H"] == pytest.approx(2.0, abs=1e-12)
    assert len(data["distances"]) == 2
    assert run(["limit", "--config", cfg("pendulum_limit.toml"), "--deltas", "0.1,0.2"]) == 2
