import csv
import subprocess
import sys

import pytest

from p2pagg.cli import main

MINIMAL = """
[run]
peers = 8
rounds = 3
protocol = "rsa"
committee_size = 7

[data]
classes = 3
dim = 4
samples = 1000
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text(MINIMAL)
    return p


def test_run_ok(cfg_file, tmp_path, capsys):
    assert main(["run", "--config", str(cfg_file), "--out", str(tmp_path / "o")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "o" / "summary.csv")))
    assert len(rows) == 3 and all(r["seed"] == "0" for r in rows)
    assert "3 rounds" in capsys.readouterr().out


def test_run_deterministic(cfg_file, tmp_path):
    for name in ("a", "b"):
        assert main(["run", "--config", str(cfg_file), "--out", str(tmp_path / name), "--seed", "5"]) == 0
    assert (tmp_path / "a" / "summary.csv").read_bytes() == (tmp_path / "b" / "summary.csv").read_bytes()


def test_run_overrides(cfg_file, tmp_path):
    assert main(["run", "--config", str(cfg_file), "--out", str(tmp_path), "--protocol", "cc", "--peers", "9"]) == 0
    first = (tmp_path / "transcripts.ndjson").read_text().splitlines()[0]
    assert '"protocol": "cc"' in first and '"clients": [1, 2, 3, 4, 5, 6, 7, 8, 9]' in first


def test_malformed_config_exit_64(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text("[run]\npeers = = 3\n")
    assert main(["run", "--config", str(p), "--out", str(tmp_path)]) == 64
    assert "line 2" in capsys.readouterr().err


def test_unknown_key_exit_64(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text("[run]\nround = 3\n")
    assert main(["run", "--config", str(p), "--out", str(tmp_path)]) == 64
    assert "unknown key 'round' in [run]" in capsys.readouterr().err


def test_missing_config_exit_74(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.toml"), "--out", str(tmp_path)]) == 74


def test_unwritable_output_exit_74(cfg_file, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["run", "--config", str(cfg_file), "--out", str(blocker / "sub")]) == 74


def test_protocol_abort_exit_2(cfg_file, tmp_path):
    cfg_file.write_text(MINIMAL + "\n[dropout]\ncommittee = 0.5\n")
    assert main(["run", "--config", str(cfg_file), "--out", str(tmp_path)]) == 2


def test_committee_size(capsys):
    assert main(["committee-size", "--p", "1/10"]) == 0
    assert capsys.readouterr().out.strip() == "46"
    assert main(["committee-size", "--p", "1/10", "--dropout", "1/10"]) == 0
    assert capsys.readouterr().out.strip() == "60"
    assert main(["committee-size", "--p", "x"]) == 64


SWEEP = MINIMAL + """
[sweep]
protocols = ["rsa", "cc", "flt"]
attacks = ["none", "bf", "lf", "ipm", "alie"]
f = [2]
"""


def test_sweep_rows_and_determinism(tmp_path):
    p = tmp_path / "sweep.toml"
    p.write_text(SWEEP.replace("rounds = 3", "rounds = 1"))
    for name in ("a", "b"):
        assert main(["sweep", "--config", str(p), "--out", str(tmp_path / name)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "a" / "sweep.csv")))
    assert len(rows) == 15
    assert all(r["status"] == "ok" and r["config_hash"] and r["seed"] == "0" for r in rows)
    assert {r["f"] for r in rows if r["attack"] == "none"} == {"0"}
    assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()


def test_sweep_empty_grid_exit_64(tmp_path):
    p = tmp_path / "sweep.toml"
    p.write_text(MINIMAL + '\n[sweep]\nprotocols = []\nattacks = ["none"]\nf = [0]\n')
    assert main(["sweep", "--config", str(p), "--out", str(tmp_path)]) == 64


def test_bench_writes_csv(tmp_path):
    rc = main(["bench", "--protocol", "rsa,flt", "--params", "100,200", "--peers", "10", "--trials", "1",
               "--out", str(tmp_path)])
    assert rc == 0
    rows = list(csv.DictReader(open(tmp_path / "bench.csv")))
    assert [(r["protocol"], r["d"], r["committee"]) for r in rows] == [
        ("rsa", "100", "46"), ("rsa", "200", "46"), ("flt", "100", "121"), ("flt", "200", "121")]


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "p2pagg.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "committee-size" in out.stdout
