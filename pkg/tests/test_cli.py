import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from rjtune.cli import ConfigError, main, resolve_config
from rjtune.diffusion import inefficiency
from rjtune.io import csv_text, fmt, json_text, write_csv


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_fmt_and_csv():
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt(None) == "" and fmt(True) == "1" and fmt(np.int64(3)) == "3"
    assert csv_text(("a", "b"), [(1, "x,y")]) == 'a,b\r\n1,"x,y"\r\n'
    assert json_text({"b": math.nan, "a": np.float64(1.5)}) == '{\n  "a": 1.5,\n  "b": null\n}\n'


def test_atomic_write_leaves_no_partial_file(tmp_path):
    def rows():
        yield (1,)
        raise RuntimeError("boom")
    with pytest.raises(RuntimeError):
        write_csv(tmp_path / "x.csv", ("a",), rows())
    assert list(tmp_path.iterdir()) == []


def test_sample_minimal(tmp_path):
    assert main(["sample", "--n", "7", "--iters", "200", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "trace.csv")
    assert rows[0] == ["iter", "k", "x1", "move_kind", "accepted"]
    assert len(rows) == 201
    assert {r[3] for r in rows[1:]} <= {"update", "birth", "death"}
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["chains"][0]["iterations"] == 200


def test_sample_zero_iterations(tmp_path):
    assert main(["sample", "--iters", "0", "--out", str(tmp_path)]) == 0
    assert read_csv(tmp_path / "trace.csv") == [["iter", "k", "x1", "move_kind", "accepted"]]


def test_sample_multiple_chains_worker_independent(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["sample", "--n", "7", "--iters", "300", "--chains", "3", "--seed", "5"]
    assert main(args + ["--out", str(a), "--workers", "1"]) == 0
    assert main(args + ["--out", str(b), "--workers", "2"]) == 0
    for name in ("trace_chain0.csv", "trace_chain2.csv", "summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert (a / "trace_chain0.csv").read_bytes() != (a / "trace_chain1.csv").read_bytes()


def test_config_file_and_overrides(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"target": {"n": 7}, "iterations": 50, "seed": 3}))
    assert main(["sample", "--config", str(cfg), "--iters", "20", "--out", str(tmp_path)]) == 0
    assert len(read_csv(tmp_path / "trace.csv")) == 21
    toml = tmp_path / "c.toml"
    toml.write_text('iterations = 10\n[target]\nn = 7\n')
    assert main(["sample", "--config", str(toml), "--out", str(tmp_path / "t")]) == 0
    assert len(read_csv(tmp_path / "t" / "trace.csv")) == 11


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"iteratons": 5}))
    assert main(["sample", "--config", str(bad)]) == 2
    assert "iteratons" in capsys.readouterr().err
    assert main(["sample", "--tau", "1.5", "--out", str(tmp_path)]) == 2
    assert "tau" in capsys.readouterr().err
    assert main(["tune", "--rate-target", "1.0"]) == 2
    assert "rate_target" in capsys.readouterr().err
    assert main(["curves", "--tau-grid", "0,0.5", "--out", str(tmp_path)]) == 2
    assert main(["sample", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["nonsense"]) == 2
    with pytest.raises(ConfigError):
        resolve_config("sample", {"iterations": "many"}, {})
    with pytest.raises(ConfigError):
        resolve_config("sample", {}, {"seed": -1})


def test_curves(tmp_path):
    assert main(["curves", "--out", str(tmp_path)]) == 0
    stars = {float(a): float(t) for a, t in read_csv(tmp_path / "figure1_tau_star.csv")[1:]}
    assert {round(stars[a], 3) for a in (2.0, 5.0, 25.0)} == {0.415, 0.334, 0.194}
    rows = read_csv(tmp_path / "figure1_inefficiency.csv")
    assert rows[0] == ["A", "tau", "inefficiency"]
    taus = {float(r[1]) for r in rows[1:]}
    assert 0.0 not in taus and 1.0 not in taus
    rng = np.random.default_rng(0)
    for i in rng.choice(len(rows) - 1, 10, replace=False):
        A, tau, v = map(float, rows[1 + i])
        assert v == pytest.approx(inefficiency(tau, A), abs=1e-6)


def test_experiment_budget_refusal_and_schema(tmp_path):
    assert main(["experiment", "--budget-seconds", "0.001", "--out", str(tmp_path)]) == 3
    assert not (tmp_path / "experiment.csv").exists()
    args = ["experiment", "--n", "7", "--A-list", "2", "--tau-grid", "0.3,0.6",
            "--replicates", "3", "--iters", "500", "--out", str(tmp_path), "--workers", "1"]
    assert main(args) == 0
    rows = read_csv(tmp_path / "experiment.csv")
    assert rows[0] == ["A", "tau", "MAD_k", "MAD_mu", "MAD_sigma", "global_measure"]
    assert len(rows) == 3
    meta = json.loads((tmp_path / "experiment.json").read_text())
    assert meta["config"]["n"] == 7


def test_limitcheck_single_n(tmp_path):
    args = ["limitcheck", "--n-ladder", "50", "--seeds", "1", "--iters", "20000",
            "--draws", "5000", "--out", str(tmp_path)]
    assert main(args) == 0
    rows = read_csv(tmp_path / "limitcheck.csv")
    assert rows[0] == ["check", "n", "seed", "estimate", "se", "target", "distance",
                       "finite_n_exact"]
    assert [r[0] for r in rows[1:]] == ["birth_rate", "z1_ks_jittered"]
    assert main(args[:2] + ["6"] + args[3:]) == 2


def test_tune_writes_report(tmp_path, capsys):
    args = ["tune", "--n", "50", "--iters", "200000", "--out", str(tmp_path)]
    assert main(args) == 0
    rep = json.loads((tmp_path / "tune_report.json").read_text())
    assert rep["ell"] > 0 and 0 < rep["tau_rate_rule"] < 0.5
    assert "update acceptance" in capsys.readouterr().out


def test_numerical_guard_exit_code(monkeypatch, tmp_path):
    from rjtune import cli
    from rjtune.errors import NumericalGuardError

    def boom(cfg):
        raise NumericalGuardError("overflow")
    monkeypatch.setitem(cli.COMMANDS, "curves", boom)
    assert main(["curves", "--out", str(tmp_path)]) == 4


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "rjtune", "curves", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert out.returncode == 0
    assert (tmp_path / "figure1_tau_star.csv").exists()


def test_limitcheck_ladder_trends(tmp_path):
    args = ["limitcheck", "--seeds", "1", "--iters", "50000", "--draws", "1000000",
            "--out", str(tmp_path)]
    assert main(args) == 0
    rows = read_csv(tmp_path / "limitcheck.csv")[1:]
    birth = [r for r in rows if r[0] == "birth_rate"]
    ks = [r for r in rows if r[0] == "z1_ks_jittered"]
    assert [int(r[1]) for r in birth] == [50, 200, 1000]
    # the finite-n exact rate approaches 1/A monotonically along the ladder
    gaps = [abs(float(r[7]) - float(r[5])) for r in birth]
    assert gaps[0] > gaps[1] > gaps[2]
    stats = [float(r[3]) for r in ks]
    assert stats[0] > stats[1] > stats[2] and stats[2] < 0.05
