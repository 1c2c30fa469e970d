"""Aggregation template and the committee round driver.

A protocol is an :class:`AggregationSpec`: a client-side update, a public
preprocessing map into integer vectors, membership checks on those vectors,
a member-local aggregation over shares, and a postprocessing step every peer
applies to the opened aggregate. :func:`run_round` executes one round:
coin flipping, committee election, share distribution, challenge
derivation, batched checks, shared aggregation, opening, broadcast with
majority vote, and postprocessing.
"""

from __future__ import annotations

import hashlib
import time
from abc import ABC, abstractmethod
from collections import Counter
from concurrent.futures import Executor
from dataclasses import dataclass, field as dc_field
from typing import Callable, Sequence

import numpy as np

from . import dzk, field, randomness, sharing
from .attacks import AttackConfig, malicious_delta
from .committee import CommitteePolicy, committee_size, tolerated_dropouts
from .learner import Dataset
from .network import Mailbox


class RoundAbort(RuntimeError):
    pass


@dataclass
class Peer:
    peer_id: int
    data: Dataset
    rng: np.random.Generator
    malicious: bool = False
    state: dict = dc_field(default_factory=dict)


@dataclass
class RoundContext:
    """Public per-round values every peer can compute on its own."""

    round: int
    w: np.ndarray
    extra: dict = dc_field(default_factory=dict)


@dataclass(frozen=True)
class CheckSpec:
    """A batched membership check on one named part of the preprocessed vector.

    ``kind`` is ``"binary"``, ``"sign"`` or ``"unit_length"``; the last one
    recomposes ``width``-bit groups before squaring.
    """

    kind: str
    part: str
    width: int = 1
    constant: int = 0


class AggregationSpec(ABC):
    name: str = "base"
    depth: int = 1

    def round_context(self, w: np.ndarray, round_index: int) -> RoundContext | None:
        """Public context for the round, or ``None`` to skip it."""
        return RoundContext(round_index, np.asarray(w, dtype=np.float64))

    def init_client_state(self, peer: Peer, w: np.ndarray) -> None:
        pass

    @abstractmethod
    def client_update(self, peer: Peer, ctx: RoundContext) -> np.ndarray:
        """Compute the raw update ``u`` and advance the peer's local state."""

    def to_delta(self, u: np.ndarray, ctx: RoundContext) -> np.ndarray:
        return np.asarray(u, dtype=np.float64) - ctx.w

    def from_delta(self, delta: np.ndarray, ctx: RoundContext) -> np.ndarray:
        return ctx.w + delta

    @abstractmethod
    def layout(self, ctx: RoundContext) -> list[tuple[str, int]]:
        """Names and lengths of the parts of a preprocessed vector, in order."""

    @abstractmethod
    def preprocess(self, u: np.ndarray, ctx: RoundContext) -> dict[str, np.ndarray]:
        """Map an update into the valid set as integer vectors."""

    @abstractmethod
    def in_domain(self, v: dict[str, np.ndarray], ctx: RoundContext) -> bool:
        """Plaintext membership test for the valid set."""

    @abstractmethod
    def checks(self, ctx: RoundContext) -> list[CheckSpec]:
        ...

    @abstractmethod
    def member_aggregate(self, parts: dict[str, np.ndarray], t: int) -> list[tuple[str, np.ndarray, int]]:
        """Local aggregation on shares.

        ``parts[name]`` has shape ``(members, clients, length)``. Returns
        ``(name, (members, L) shares, degree)`` outputs to open.
        """

    @abstractmethod
    def plaintext_aggregate(self, vs: Sequence[dict[str, np.ndarray]], ctx: RoundContext) -> dict[str, np.ndarray]:
        """Exact integer version of :meth:`member_aggregate` followed by opening."""

    @abstractmethod
    def postprocess(self, revealed: dict[str, np.ndarray], ctx: RoundContext, n_clients: int) -> np.ndarray:
        ...

    @abstractmethod
    def preimage(self, v: dict[str, np.ndarray], ctx: RoundContext) -> np.ndarray:
        """An update ``u`` with ``preprocess(u) == v``."""

    def real_aggregate(self, us: Sequence[np.ndarray], ctx: RoundContext) -> np.ndarray:
        """Floating-point reference update without any fixed-point encoding."""
        revealed = self.plaintext_aggregate([self.preprocess(u, ctx) for u in us], ctx)
        return self.postprocess(revealed, ctx, len(us))

    def sample_valid(self, ctx: RoundContext, rng: np.random.Generator) -> dict[str, np.ndarray]:
        """Uniform-ish random member of the valid set (for round-trip tests)."""
        raise NotImplementedError

    # helpers shared by all protocols

    def flatten(self, v: dict[str, np.ndarray], ctx: RoundContext) -> np.ndarray:
        parts = []
        for name, length in self.layout(ctx):
            arr = np.asarray(v[name]).ravel()
            if arr.size != length:
                raise ValueError(f"part {name!r} has {arr.size} entries, expected {length}")
            parts.append(field.asfield(arr))
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.uint64)

    def split(self, stacked: np.ndarray, ctx: RoundContext) -> dict[str, np.ndarray]:
        out, pos = {}, 0
        for name, length in self.layout(ctx):
            out[name] = stacked[..., pos:pos + length]
            pos += length
        return out


def surjectivity_roundtrip(spec: AggregationSpec, v: dict[str, np.ndarray], ctx: RoundContext) -> bool:
    u = spec.preimage(v, ctx)
    back = spec.preprocess(u, ctx)
    return all(np.array_equal(np.asarray(back[k]), np.asarray(v[k])) for k in v)


def plaintext_update(spec: AggregationSpec, us: Sequence[np.ndarray], ctx: RoundContext) -> np.ndarray:
    """The single-server pipeline: preprocess, aggregate in the clear, postprocess."""
    if not us:
        return ctx.w.copy()
    vs = [spec.preprocess(u, ctx) for u in us]
    return spec.postprocess(spec.plaintext_aggregate(vs, ctx), ctx, len(vs))


# -- transcript ------------------------------------------------------------------------


@dataclass
class TamperEvent:
    """A committee member (by roster position) adds ``delta`` to one opened share."""

    round: int
    member: int
    delta: int
    output: int = 0
    coordinate: int = 0


@dataclass
class RoundOptions:
    committee_size: int | None = None
    dzk_policy: str = "drop"
    fallback: bool = True
    reveal_check: str = "exact"
    subsample: float | None = None
    dropped_clients: frozenset = frozenset()
    committee_drop_fraction: float = 0.0
    drop_rng: np.random.Generator | None = None
    tamper: Sequence[TamperEvent] = ()
    lying_members: frozenset = frozenset()
    submission_hook: Callable[[int, np.ndarray], np.ndarray] | None = None
    attack: AttackConfig = AttackConfig()
    executor: Executor | None = None

    def __post_init__(self):
        if self.dzk_policy not in ("drop", "abort"):
            raise ValueError(f"dzk policy must be 'drop' or 'abort', got {self.dzk_policy!r}")
        if self.reveal_check not in ("exact", "sketch"):
            raise ValueError(f"reveal check must be 'exact' or 'sketch', got {self.reveal_check!r}")


@dataclass
class RoundTranscript:
    round: int
    protocol: str
    joint_seed: str = ""
    committee: list[int] = dc_field(default_factory=list)
    threshold: int = 0
    clients: list[int] = dc_field(default_factory=list)
    dropped_clients: list[int] = dc_field(default_factory=list)
    dropped_members: list[int] = dc_field(default_factory=list)
    verdicts: list[dzk.BatchVerdict] = dc_field(default_factory=list)
    flagged: list[int] = dc_field(default_factory=list)
    accepted: list[int] = dc_field(default_factory=list)
    openings: list[dict] = dc_field(default_factory=list)
    revealed: dict[str, list[int]] = dc_field(default_factory=dict)
    tamper_detected: list[int] = dc_field(default_factory=list)
    notes: list[str] = dc_field(default_factory=list)
    sent_bytes: dict[int, int] = dc_field(default_factory=dict)
    received_bytes: dict[int, int] = dc_field(default_factory=dict)
    honest_agreement: bool = True
    aborted: bool = False
    abort_reason: str = ""
    skipped: bool = False
    w_digest: str = ""
    phase_seconds: dict[str, float] = dc_field(default_factory=dict)
    fr_cpu_seconds: float = 0.0
    # in-memory only: raw updates and preprocessed vectors of accepted clients
    accepted_updates: list[np.ndarray] = dc_field(default_factory=list, repr=False)
    context: RoundContext | None = dc_field(default=None, repr=False)

    @property
    def bytes_total(self) -> int:
        return sum(self.sent_bytes.values())

    def to_json(self, include_timings: bool = False) -> dict:
        out = {
            "round": self.round,
            "protocol": self.protocol,
            "joint_seed": self.joint_seed,
            "committee": self.committee,
            "threshold": self.threshold,
            "clients": self.clients,
            "dropped_clients": self.dropped_clients,
            "dropped_members": self.dropped_members,
            "verdicts": [v.to_json() for v in self.verdicts],
            "flagged": self.flagged,
            "accepted": self.accepted,
            "openings": self.openings,
            "revealed": self.revealed,
            "tamper_detected": self.tamper_detected,
            "notes": self.notes,
            "sent_bytes": {str(k): v for k, v in sorted(self.sent_bytes.items())},
            "received_bytes": {str(k): v for k, v in sorted(self.received_bytes.items())},
            "bytes_total": self.bytes_total,
            "honest_agreement": self.honest_agreement,
            "aborted": self.aborted,
            "abort_reason": self.abort_reason,
            "skipped": self.skipped,
            "w_digest": self.w_digest,
        }
        if include_timings:
            out["phase_seconds"] = self.phase_seconds
            out["fr_cpu_seconds"] = self.fr_cpu_seconds
        return out


def weights_digest(w: np.ndarray) -> str:
    return hashlib.sha256(np.asarray(w, dtype="<f8").tobytes()).hexdigest()


# -- update computation (shared by the secure and plaintext engines) --------------------


def compute_updates(
    spec: AggregationSpec,
    peers: dict[int, Peer],
    clients: Sequence[int],
    ctx: RoundContext,
    attack: AttackConfig,
    executor: Executor | None = None,
) -> dict[int, np.ndarray]:
    """Raw updates of ``clients``; malicious clients replace theirs per ``attack``."""
    ordered = sorted(clients)

    def one(pid):
        try:
            return spec.client_update(peers[pid], ctx)
        except FloatingPointError as exc:
            raise RoundAbort(str(exc)) from exc

    raw = list(executor.map(one, ordered)) if executor is not None else [one(pid) for pid in ordered]
    updates = dict(zip(ordered, raw))
    for pid, u in updates.items():
        if not np.all(np.isfinite(u)):
            raise RoundAbort(f"non-finite update from peer {pid}")
    bad = [pid for pid in ordered if peers[pid].malicious]
    if bad and attack.kind not in ("none", "lf"):
        honest = [spec.to_delta(updates[pid], ctx) for pid in ordered if not peers[pid].malicious]
        for pid in bad:
            own = spec.to_delta(updates[pid], ctx)
            updates[pid] = spec.from_delta(malicious_delta(attack, own, honest, len(ordered)), ctx)
    return updates


# -- the round ---------------------------------------------------------------------------


def _coin_flip(peer_ids: Sequence[int], rng, mailbox: Mailbox, k: int) -> randomness.JointSeed:
    commitments, openings = {}, {}
    for pid in peer_ids:
        c, o = randomness.commit(rng.bytes(randomness.CONTRIBUTION_BYTES), rng)
        commitments[pid], openings[pid] = c, o
        mailbox.broadcast(pid, peer_ids, c.digest, k, "commit")
    for pid in peer_ids:
        o = openings[pid]
        mailbox.broadcast(pid, peer_ids, o.value + o.nonce, k, "reveal")
    # every peer receives the same broadcasts; checking one view suffices
    views = {pid: mailbox.drain(pid) for pid in peer_ids}
    observer = peer_ids[0]
    received_c = {m.sender: randomness.Commitment(m.payload) for m in views[observer] if m.phase == "commit"}
    received_o = {
        m.sender: randomness.Opening(m.payload[:32], m.payload[32:]) for m in views[observer] if m.phase == "reveal"
    }
    received_c[observer], received_o[observer] = commitments[observer], openings[observer]
    order = sorted(peer_ids)
    return randomness.derive_joint_seed(
        [received_o.get(p) for p in order], [received_c.get(p) for p in order]
    )


def sharing_params(spec: AggregationSpec, m: int, policy: CommitteePolicy) -> sharing.SharingParams:
    return sharing.SharingParams.for_committee(m, spec.depth, tolerated_dropouts(m, policy))


def run_round(
    spec: AggregationSpec,
    peers: dict[int, Peer],
    policy: CommitteePolicy,
    w: np.ndarray,
    rng: np.random.Generator,
    round_index: int = 0,
    options: RoundOptions | None = None,
    mailbox: Mailbox | None = None,
) -> tuple[np.ndarray, RoundTranscript]:
    """Execute one secure aggregation round; returns ``(new_w, transcript)``.

    On abort the weights are returned unchanged and the transcript says why.
    """
    opts = options or RoundOptions()
    mailbox = mailbox if mailbox is not None else Mailbox()
    mailbox.reset_counters()
    mailbox.offline.clear()
    w = np.asarray(w, dtype=np.float64)
    tr = RoundTranscript(round=round_index, protocol=spec.name)
    peer_ids = sorted(peers)
    clock = time.perf_counter()

    def lap(name):
        nonlocal clock
        now = time.perf_counter()
        tr.phase_seconds[name] = tr.phase_seconds.get(name, 0.0) + now - clock
        clock = now

    try:
        new_w = _run_round(spec, peers, peer_ids, policy, w, rng, round_index, opts, mailbox, tr, lap)
    except (RoundAbort, sharing.SharingError, randomness.OpeningError) as exc:
        tr.aborted = True
        tr.abort_reason = str(exc) or type(exc).__name__
        new_w = w.copy()
    tr.sent_bytes = dict(mailbox.sent_bytes)
    tr.received_bytes = dict(mailbox.received_bytes)
    tr.w_digest = weights_digest(new_w)
    # undelivered traffic from an aborted round must not leak into the next one
    for pid in peer_ids:
        mailbox.drain(pid)
    return new_w, tr


def _run_round(spec, peers, peer_ids, policy, w, rng, k, opts, mailbox, tr, lap):
    m = opts.committee_size or committee_size(policy)
    if m > len(peer_ids):
        raise RoundAbort(f"committee election failed: need {m} peers, have {len(peer_ids)}")

    # coin flip, election, subsampling
    seed = _coin_flip(peer_ids, rng, mailbox, k)
    tr.joint_seed = seed.hex()
    committee = randomness.elect_committee(seed, peer_ids, m)
    tr.committee = list(committee)
    clients = peer_ids
    if opts.subsample is not None and opts.subsample < 1:
        count = max(1, int(round(opts.subsample * len(peer_ids))))
        clients = sorted(randomness.subsample_clients(seed, k, peer_ids, count))
    tr.dropped_clients = sorted(set(clients) & set(opts.dropped_clients))
    clients = [c for c in clients if c not in opts.dropped_clients]
    tr.clients = list(clients)
    params = sharing_params(spec, m, policy)
    t = params.t
    tr.threshold = t
    lap("elect")

    ctx = spec.round_context(w, k)
    if ctx is None:
        tr.skipped = True
        tr.notes.append("round skipped: degenerate public context")
        return w.copy()
    tr.context = ctx
    if not clients:
        raise RoundAbort("no clients online")
    updates = compute_updates(spec, peers, clients, ctx, opts.attack, opts.executor)
    lap("client")

    # share distribution: client i sends one packed vector per member
    for cid in clients:
        vec = spec.flatten(spec.preprocess(updates[cid], ctx), ctx)
        if opts.submission_hook is not None:
            vec = field.asfield(opts.submission_hook(cid, vec))
        shares = sharing.share_vector(vec, params, rng)
        for pos, member in enumerate(committee):
            mailbox.send(cid, member, sharing.pack_share_vector(pos + 1, t, shares[pos]), k, "share")
    lap("share")

    # committee members receive, then some go offline
    n_drop = 0
    if opts.committee_drop_fraction > 0:
        n_drop = int(np.floor(opts.committee_drop_fraction * m + 1e-9))
    drop_rng = opts.drop_rng if opts.drop_rng is not None else rng
    dropped = sorted(drop_rng.choice(committee, size=n_drop, replace=False).tolist()) if n_drop else []
    tr.dropped_members = dropped
    online_pos = [pos for pos, member in enumerate(committee) if member not in dropped]
    online_ids = [pos + 1 for pos in online_pos]
    length = sum(n for _, n in spec.layout(ctx))
    held = np.zeros((len(online_pos), len(clients), length), dtype=np.uint64)
    client_index = {cid: i for i, cid in enumerate(clients)}
    for row, pos in enumerate(online_pos):
        for msg in mailbox.drain(committee[pos], "share"):
            party, degree, values = sharing.unpack_share_vector(msg.payload)
            if party != pos + 1 or degree != t or values.size != length:
                raise RoundAbort(f"malformed share from {msg.sender} to member {committee[pos]}")
            held[row, client_index[msg.sender]] = values
    for pos in sorted(set(range(m)) - set(online_pos)):
        mailbox.drain(committee[pos])
        mailbox.offline.add(committee[pos])
    needed = (spec.depth + 1) * t + 1
    if len(online_ids) < needed:
        raise RoundAbort(f"degree budget: {len(online_ids)} members online, {needed} required")
    lap("receive")

    # challenges only after every share is delivered
    parts = spec.split(held, ctx)
    checks = spec.checks(ctx)
    sizes = []
    for chk in checks:
        per_client = 1 if chk.kind == "unit_length" else parts[chk.part].shape[2]
        sizes.append(per_client * len(clients))
    challenges = randomness.derive_challenges(seed, k, sum(sizes))
    lap("challenge")

    flagged: set[int] = set()
    pos = 0
    for chk, size in zip(checks, sizes):
        r = challenges[pos:pos + size]
        pos += size
        block = parts[chk.part]
        per_client = [block[:, i, :] for i in range(len(clients))]
        if chk.kind == "binary":
            verdict = dzk.batch_binary_check(per_client, r, online_ids, t, clients, opts.fallback)
        elif chk.kind == "sign":
            verdict = dzk.batch_sign_check(per_client, r, online_ids, t, clients, opts.fallback)
        elif chk.kind == "unit_length":
            mags = [dzk.recompose_bits(b, chk.width) for b in per_client]
            verdict = dzk.batch_unit_length_check(mags, chk.constant, r, online_ids, t, clients, opts.fallback)
        else:
            raise ValueError(f"unknown check kind {chk.kind!r}")
        tr.verdicts.append(verdict)
        if not verdict.verified:
            tr.notes.append(f"unverified reconstruction: {verdict.name} check at degree {2 * t}")
        if not verdict.accepted:
            if opts.dzk_policy == "abort":
                raise RoundAbort(f"{verdict.name} check rejected")
            if not verdict.flagged_clients:
                raise RoundAbort(f"{verdict.name} check rejected and no client identified")
            flagged.update(verdict.flagged_clients)
    tr.flagged = sorted(flagged)
    accepted = [c for c in clients if c not in flagged]
    tr.accepted = accepted
    tr.accepted_updates = [updates[c] for c in accepted]
    lap("check")
    if not accepted:
        raise RoundAbort("every client was flagged")

    # shared aggregation over accepted clients only
    keep = [client_index[c] for c in accepted]
    cpu0 = time.process_time()
    acc_parts = {name: arr[:, keep, :] for name, arr in parts.items()}
    outputs = spec.member_aggregate(acc_parts, t)
    for ev in opts.tamper:
        if ev.round == k and ev.member in online_pos:
            row = online_pos.index(ev.member)
            _, shares_out, _ = outputs[ev.output]
            shares_out[row, ev.coordinate] = field.vadd(shares_out[row, ev.coordinate], field.asfield(ev.delta))
    fr_cpu = time.process_time() - cpu0
    lap("aggregate")

    # members exchange output shares and open them
    online_members = [committee[p] for p in online_pos]
    for row, p in enumerate(online_pos):
        for name, shares_out, degree in outputs:
            payload = sharing.pack_share_vector(p + 1, degree, shares_out[row])
            mailbox.broadcast(committee[p], online_members, payload, k, "open")
    for member in online_members:
        mailbox.drain(member, "open")
    cpu0 = time.process_time()
    revealed: dict[str, np.ndarray] = {}
    tamper_detected: set[int] = set()
    for idx, (name, shares_out, degree) in enumerate(outputs):
        sketch_seed = int.from_bytes(seed.seed[:8], "little") + idx
        try:
            opened = sharing.open_vector(online_ids, shares_out, degree, opts.reveal_check, sketch_seed)
        except sharing.SharingError as exc:
            tr.openings.append({"output": name, "degree": degree, "shares": len(online_ids),
                                "verified": True, "detected": True, "corrupt": []})
            raise RoundAbort(f"reconstruction of {name!r} failed: {exc}") from exc
        corrupt_members = [committee[pid - 1] for pid in opened.corrupt]
        tamper_detected.update(corrupt_members)
        tr.openings.append({
            "output": name, "degree": degree, "shares": len(online_ids),
            "verified": opened.verified, "detected": bool(opened.corrupt), "corrupt": corrupt_members,
        })
        if not opened.verified:
            tr.notes.append(f"unverified reconstruction: {name} at degree {degree} with {len(online_ids)} shares")
        revealed[name] = opened.value
    fr_cpu += time.process_time() - cpu0
    tr.fr_cpu_seconds = fr_cpu / len(online_ids)
    tr.tamper_detected = sorted(tamper_detected)
    tr.revealed = {name: field.to_signed(v).tolist() for name, v in revealed.items()}
    lap("open")

    # broadcast with majority vote at every peer
    payload = b"".join(field.encode_elements(revealed[name]) for name, _, _ in outputs)
    recipients = [p for p in peer_ids if p not in dropped]
    for member in online_members:
        body = payload
        if member in opts.lying_members:
            body = bytes([payload[0] ^ 1]) + payload[1:]
        mailbox.broadcast(member, recipients, body, k, "result")
    results: dict[bytes, np.ndarray] = {}
    views: list[bytes] = []
    for pid in recipients:
        msgs = mailbox.drain(pid, "result")
        votes = Counter(m.payload for m in msgs)
        if pid in online_members:
            # a member also counts the value it reconstructed itself
            votes[payload] += 1
        winner, count = votes.most_common(1)[0]
        if 2 * count <= sum(votes.values()):
            raise RoundAbort(f"no majority result at peer {pid}")
        views.append(winner)
    for view in set(views):
        decoded, offset = {}, 0
        data = field.decode_elements(view)
        for name, shares_out, _ in outputs:
            size = shares_out.shape[1]
            decoded[name] = field.to_signed(data[offset:offset + size])
            offset += size
        results[view] = spec.postprocess(decoded, ctx, len(accepted))
    honest_views = {v for pid, v in zip(recipients, views) if not peers[pid].malicious}
    tr.honest_agreement = len(honest_views) == 1
    if not tr.honest_agreement:
        raise RoundAbort("honest peers disagree on the revealed aggregate")
    lap("broadcast")
    return results[next(iter(honest_views))]
