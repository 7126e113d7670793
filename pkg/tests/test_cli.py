import json
import subprocess
import sys

import pytest

from banker_omd.cli import main

CONFIG = """\
algorithm: {kind: tinf, arms: 3, horizon: 60}
environment:
  losses: {kind: bernoulli, means: [0.2, 0.5, 0.6]}
  delays: {kind: uniform, d: 4}
runs: 3
master_seed: 99
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "exp.yaml"
    p.write_text(CONFIG)
    return p


def test_run_writes_outputs(cfg_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "-c", str(cfg_file), "--out", str(out), "--seed", "5", "--runs", "2", "--dump-actions"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["master_seed"] == 5 and summary["runs"] == 2
    assert (out / "actions.csv").exists()
    assert "mean final regret" in capsys.readouterr().out


def test_run_is_byte_identical(cfg_file, tmp_path, monkeypatch):
    out = tmp_path / "out"
    names = ("runs.csv", "summary.json", "regret_curve.csv")
    monkeypatch.setenv("BANKER_THREADS", "1")
    main(["run", "-c", str(cfg_file), "--out", str(out)])
    first = [(out / n).read_bytes() for n in names]
    monkeypatch.setenv("BANKER_THREADS", "2")
    main(["run", "-c", str(cfg_file), "--out", str(out)])
    assert [(out / n).read_bytes() for n in names] == first


def test_sweep(cfg_file, tmp_path, capsys):
    assert main(["sweep", "-c", str(cfg_file), "--param", "environment.delays.d", "--values", "0,10",
                 "--out", str(tmp_path / "s")]) == 0
    out = capsys.readouterr().out
    assert "environment.delays.d=0" in out and "environment.delays.d=10" in out
    assert (tmp_path / "s" / "sweep.csv").read_text().count("\n") == 3


def test_verify_filter(capsys):
    assert main(["verify", "--filter", "summation"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("PASS  summation_lemma")
    assert main(["verify", "--filter", "no_such_property"]) == 2


def test_bad_config_reports_error(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("algorithm: {kind: nope}\n")
    assert main(["run", "-c", str(p)]) == 2
    assert "unknown algorithm" in capsys.readouterr().err


def test_missing_file(tmp_path, capsys):
    assert main(["run", "-c", str(tmp_path / "missing.yaml")]) == 2


def test_console_entry_point(cfg_file, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "banker_omd.cli", "run", "-c", str(cfg_file),
                           "--out", str(tmp_path / "o"), "--runs", "1"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
