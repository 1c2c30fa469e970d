import json

import numpy as np
import pytest

from p2pagg.attacks import AttackConfig
from p2pagg.committee import CommitteePolicy
from p2pagg.simulator import DataConfig, SimConfig, inject_committee_tampering, run_simulation, write_outputs

SMALL = DataConfig(classes=3, dim=4, samples=1200)


def _cfg(**kw):
    base = dict(peers=10, rounds=5, committee_size=7, data=SMALL, seed=3)
    base.update(kw)
    return SimConfig(**base)


@pytest.mark.parametrize("protocol", ["rsa", "cc"])
def test_secure_engine_equals_plaintext_oracle(protocol):
    a = run_simulation(_cfg(protocol=protocol), keep_weights=True)
    b = run_simulation(_cfg(protocol=protocol, engine="plaintext"), keep_weights=True)
    assert a.aborts == 0
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)
    assert a.accuracy == b.accuracy


def test_flt_secure_engine_tracks_plaintext():
    a = run_simulation(_cfg(protocol="flt", committee_size=9), keep_weights=True)
    b = run_simulation(_cfg(protocol="flt", engine="plaintext"), keep_weights=True)
    assert a.aborts == 0
    assert max(abs(x - y) for x, y in zip(a.accuracy, b.accuracy)) <= 0.005


def test_transcript_stream_deterministic(tmp_path):
    for name in ("a", "b"):
        write_outputs(run_simulation(_cfg(protocol="cc", attack=AttackConfig("ipm", 2))), tmp_path / name)
    for f in ("transcripts.ndjson", "summary.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_outputs_written(tmp_path):
    res = run_simulation(_cfg(protocol="rsa", rounds=3))
    write_outputs(res, tmp_path)
    lines = (tmp_path / "transcripts.ndjson").read_text().splitlines()
    assert len(lines) == 3 and json.loads(lines[0])["round"] == 0
    rows = (tmp_path / "summary.csv").read_text().splitlines()
    assert rows[0] == "round,accuracy,bytes_total,aborts,flagged,seed,config_hash" and len(rows) == 4
    assert "fr_cpu_seconds" in (tmp_path / "timings.csv").read_text().splitlines()[0]
    assert np.load(tmp_path / "final_weights.npy").shape == res.final_w.shape


def test_everyone_on_committee():
    res = run_simulation(_cfg(protocol="cc", peers=7, rounds=2), keep_weights=True)
    oracle = run_simulation(_cfg(protocol="cc", peers=7, rounds=2, engine="plaintext"), keep_weights=True)
    assert res.aborts == 0 and np.array_equal(res.final_w, oracle.final_w)


def test_client_dropout_matches_survivor_oracle():
    res = run_simulation(_cfg(protocol="rsa", client_drop=0.3))
    oracle = run_simulation(_cfg(protocol="rsa", client_drop=0.3, engine="plaintext"))
    assert any(t.dropped_clients for t in res.transcripts)
    assert np.array_equal(res.final_w, oracle.final_w)


def test_committee_tampering_detected():
    cfg = inject_committee_tampering(_cfg(protocol="cc", rounds=3), round=1, member=4, delta=99)
    res = run_simulation(cfg)
    assert res.transcripts[1].tamper_detected == [res.transcripts[1].committee[4]]
    assert res.transcripts[0].tamper_detected == [] and res.transcripts[2].tamper_detected == []
    clean = run_simulation(_cfg(protocol="cc", rounds=3))
    assert np.array_equal(res.final_w, clean.final_w)


def test_halt_on_abort():
    cfg = _cfg(protocol="cc", committee_drop=0.5, halt_on_abort=True)
    res = run_simulation(cfg)
    assert len(res.transcripts) == 1 and res.aborts == 1


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(protocol="median")
    with pytest.raises(ValueError):
        SimConfig(peers=5, committee_size=6)
    with pytest.raises(ValueError):
        SimConfig(peers=3, attack=AttackConfig("bf", 4))
    with pytest.raises(ValueError):
        SimConfig(client_drop=1.0)


def test_digest_depends_on_config():
    assert _cfg().digest() == _cfg().digest()
    assert _cfg().digest() != _cfg(seed=4).digest()
    assert SimConfig(committee=CommitteePolicy(dropout=0)).digest() == SimConfig().digest()


def test_malicious_peers_chosen_by_seed():
    a = run_simulation(_cfg(rounds=0, attack=AttackConfig("bf", 3)))
    b = run_simulation(_cfg(rounds=0, attack=AttackConfig("bf", 3)))
    assert a.malicious == b.malicious and len(a.malicious) == 3
