from fractions import Fraction as F

import numpy as np
import pytest

from p2pagg.attacks import AttackConfig
from p2pagg.committee import CommitteePolicy
from p2pagg.core import RoundOptions, TamperEvent, compute_updates, plaintext_update, run_round
from p2pagg.network import Mailbox
from p2pagg.simulator import DataConfig, SimConfig, build_setup

POLICY = CommitteePolicy()


def _setup(protocol="cc", peers=10, **kw):
    cfg = SimConfig(peers=peers, rounds=1, protocol=protocol, data=DataConfig(classes=3, dim=4, samples=1200), **kw)
    return build_setup(cfg)


def _round(setup, opts=None, k=0, seed=7, policy=POLICY):
    return run_round(setup.spec, setup.peers, policy, setup.w0, np.random.default_rng(seed), k,
                     opts or RoundOptions(committee_size=7))


@pytest.mark.parametrize("protocol", ["rsa", "cc", "flt"])
def test_round_matches_plaintext_pipeline(protocol):
    s = _setup(protocol)
    new_w, tr = _round(s, RoundOptions(committee_size=10 if protocol == "flt" else 7))
    assert not tr.aborted, tr.abort_reason
    assert all(v.accepted and v.revealed_check_value.value == 0 for v in tr.verdicts)
    oracle = plaintext_update(s.spec, tr.accepted_updates, tr.context)
    assert np.array_equal(new_w, oracle)
    vs = [s.spec.preprocess(u, tr.context) for u in tr.accepted_updates]
    plain = s.spec.plaintext_aggregate(vs, tr.context)
    for name, vals in tr.revealed.items():
        assert np.array_equal(np.asarray(vals).ravel(), np.asarray(plain[name]).ravel())


def test_transcript_fields():
    s = _setup("rsa")
    _, tr = _round(s)
    j = tr.to_json()
    assert len(j["committee"]) == 7 and j["threshold"] == 3
    assert j["clients"] == list(range(1, 11))
    assert j["bytes_total"] > 0 and "phase_seconds" not in j
    assert "phase_seconds" in tr.to_json(include_timings=True)


def test_deterministic_given_seed():
    a = _round(_setup("cc"))[1].to_json()
    b = _round(_setup("cc"))[1].to_json()
    assert a == b


def test_invalid_submission_is_flagged_and_excluded():
    s = _setup("cc")

    def hook(cid, vec):
        if cid == 4:
            vec = vec.copy()
            vec[10] = 2
        return vec

    new_w, tr = _round(s, RoundOptions(committee_size=7, submission_hook=hook))
    assert not tr.aborted
    assert tr.flagged == [4]
    assert 4 not in tr.accepted
    assert tr.verdicts[0].revealed_check_value.value != 0
    assert np.array_equal(new_w, plaintext_update(s.spec, tr.accepted_updates, tr.context))


def test_invalid_submission_abort_policy():
    s = _setup("rsa")
    hook = lambda cid, vec: vec * 3 if cid == 2 else vec  # noqa: E731
    w, tr = _round(s, RoundOptions(committee_size=7, submission_hook=hook, dzk_policy="abort"))
    assert tr.aborted and np.array_equal(w, s.w0)


def test_flt_unit_length_violation_flagged():
    s = _setup("flt")
    theta = s.spec.params.theta

    def hook(cid, vec):
        if cid == 3:
            vec = vec.copy()
            vec[theta * 2] = 1 - vec[theta * 2]  # flip the low bit of one magnitude
        return vec

    _, tr = _round(s, RoundOptions(committee_size=10, submission_hook=hook))
    names = {v.name: v for v in tr.verdicts}
    assert names["binary"].accepted and names["sign"].accepted
    assert names["unit_length"].flagged_clients == [3]


def test_tampering_detected_and_corrected():
    s = _setup("rsa")
    clean_w, _ = _round(s)
    w, tr = _round(_setup("rsa"), RoundOptions(committee_size=7, tamper=[TamperEvent(0, 2, 12345)]))
    assert not tr.aborted
    assert tr.tamper_detected == [tr.committee[2]]
    assert np.array_equal(w, clean_w)


def test_no_redundancy_recorded_as_unverified():
    # degree 3t with t=2 on 7 members: exactly enough shares, nothing to check against
    s = _setup("flt")
    _, tr = _round(s, RoundOptions(committee_size=7))
    assert not tr.aborted
    assert any(n.startswith("unverified reconstruction") for n in tr.notes)
    _, full = _round(s, RoundOptions(committee_size=9))
    assert not any("unverified" in n for n in full.notes)


def test_zero_delta_tamper_not_flagged():
    _, tr = _round(_setup("rsa"), RoundOptions(committee_size=7, tamper=[TamperEvent(0, 1, 0)]))
    assert tr.tamper_detected == []


def test_lying_minority_outvoted():
    s = _setup("cc")
    clean_w, clean = _round(s)
    w, tr = _round(_setup("cc"), RoundOptions(committee_size=7, lying_members=frozenset(clean.committee[:2])))
    assert not tr.aborted and np.array_equal(w, clean_w)


def test_committee_dropout_within_budget():
    pol = CommitteePolicy(dropout=F(1, 10))
    s = _setup("cc", peers=12)
    w, tr = _round(s, RoundOptions(committee_size=10, committee_drop_fraction=0.1), policy=pol)
    assert not tr.aborted and len(tr.dropped_members) == 1
    assert np.array_equal(w, plaintext_update(s.spec, tr.accepted_updates, tr.context))


def test_committee_dropout_over_budget_aborts():
    s = _setup("cc", peers=12)
    w, tr = _round(s, RoundOptions(committee_size=10, committee_drop_fraction=0.3))
    assert tr.aborted and "degree budget" in tr.abort_reason
    assert np.array_equal(w, s.w0)


def test_client_dropout_excluded():
    s = _setup("rsa")
    _, tr = _round(s, RoundOptions(committee_size=7, dropped_clients=frozenset({1, 5})))
    assert tr.dropped_clients == [1, 5] and 1 not in tr.accepted


def test_committee_larger_than_peers_aborts():
    _, tr = _round(_setup("rsa"), RoundOptions(committee_size=11))
    assert tr.aborted


def test_malicious_updates_replace_honest_ones():
    s = _setup("cc", attack=AttackConfig("bf", 2))
    ctx = s.spec.round_context(s.w0, 0)
    ups = compute_updates(s.spec, s.peers, sorted(s.peers), ctx, AttackConfig("bf", 2))
    for pid in s.malicious:
        assert np.all(np.isfinite(ups[pid]))
    assert len(s.malicious) == 2


def test_non_finite_update_aborts():
    s = _setup("rsa")
    s.peers[3].data.X[:] = np.nan
    w, tr = _round(s)
    assert tr.aborted and np.array_equal(w, s.w0)


def test_mailbox_reused_across_rounds():
    s = _setup("rsa")
    mb = Mailbox()
    _, a = run_round(s.spec, s.peers, POLICY, s.w0, np.random.default_rng(1), 0, RoundOptions(committee_size=7), mb)
    _, b = run_round(s.spec, s.peers, POLICY, s.w0, np.random.default_rng(1), 1, RoundOptions(committee_size=7), mb)
    assert mb.pending() == 0
    assert a.bytes_total > 0 and b.bytes_total > 0

