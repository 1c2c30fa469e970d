"""Multi-round deterministic simulation of peer-to-peer training.

All randomness derives from ``SimConfig.seed`` through keyed streams
(``default_rng([seed, purpose, ...])``), so two runs with equal configs
produce byte-identical transcript streams.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field as dc_field, replace
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .attacks import AttackConfig, flip_labels
from .committee import CommitteePolicy
from .core import (
    Peer,
    RoundAbort,
    RoundOptions,
    RoundTranscript,
    TamperEvent,
    compute_updates,
    plaintext_update,
    run_round,
    weights_digest,
)
from .learner import Dataset, build_model, load_csv, load_idx, make_blobs, partition
from .network import Mailbox
from .protocols.cc import CcParams, CcSpec
from .protocols.flt import FltParams, FltSpec
from .protocols.rsa import RsaParams, RsaSpec

PROTOCOLS = ("rsa", "cc", "flt")
ENGINES = ("secure", "plaintext", "float")

# stream purposes for default_rng([seed, purpose, ...])
_S_SPLIT, _S_MALICIOUS, _S_PEER, _S_INIT, _S_ROUND, _S_DROP, _S_PART, _S_ROOT = range(8)


@dataclass(frozen=True)
class DataConfig:
    source: str = "blobs"
    classes: int = 4
    dim: int = 10
    samples: int = 4000
    separation: float = 1.0
    path: str | None = None
    labels_path: str | None = None
    test_fraction: float = 0.2
    partition: str = "iid"


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "softmax"
    hidden: int = 32


@dataclass
class SimConfig:
    peers: int = 20
    rounds: int = 50
    protocol: str = "cc"
    seed: int = 0
    engine: str = "secure"
    committee: CommitteePolicy = CommitteePolicy()
    committee_size: int | None = None
    attack: AttackConfig = AttackConfig()
    client_drop: float = 0.0
    committee_drop: float = 0.0
    subsample: float | None = None
    dzk_policy: str = "drop"
    reveal_check: str = "exact"
    halt_on_abort: bool = False
    data: DataConfig = DataConfig()
    model: ModelConfig = ModelConfig()
    rsa: RsaParams = RsaParams()
    cc: CcParams = CcParams()
    flt: FltParams = FltParams()
    tamper: Sequence[TamperEvent] = ()

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        if self.engine not in ENGINES:
            raise ValueError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        if self.peers < 1 or self.rounds < 0:
            raise ValueError("need peers >= 1 and rounds >= 0")
        if self.attack.f > self.peers:
            raise ValueError("more malicious peers than peers")
        if not 0 <= self.client_drop < 1 or not 0 <= self.committee_drop < 1:
            raise ValueError("drop rates must lie in [0, 1)")
        if self.committee_size is not None and self.committee_size > self.peers:
            raise ValueError(f"committee size {self.committee_size} exceeds peer count {self.peers}")

    def to_dict(self) -> dict:
        def conv(x):
            if isinstance(x, Fraction):
                return str(x)
            if isinstance(x, dict):
                return {k: conv(v) for k, v in x.items()}
            if isinstance(x, (list, tuple)):
                return [conv(v) for v in x]
            return x

        return conv(asdict(self))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class SimResult:
    config: SimConfig
    transcripts: list[RoundTranscript] = dc_field(default_factory=list)
    accuracy: list[float] = dc_field(default_factory=list)
    bytes_per_round: list[int] = dc_field(default_factory=list)
    fr_cpu_seconds: list[float] = dc_field(default_factory=list)
    weights: list[np.ndarray] = dc_field(default_factory=list, repr=False)
    final_w: np.ndarray | None = None
    malicious: list[int] = dc_field(default_factory=list)

    @property
    def aborts(self) -> int:
        return sum(t.aborted for t in self.transcripts)


@dataclass
class Setup:
    spec: object
    model: object
    peers: dict[int, Peer]
    train: Dataset
    test: Dataset
    w0: np.ndarray
    malicious: list[int]


def load_dataset(cfg: DataConfig, seed: int) -> Dataset:
    if cfg.source == "blobs":
        return make_blobs(seed, cfg.classes, cfg.dim, cfg.samples, cfg.separation)
    if cfg.source == "idx":
        if not cfg.path or not cfg.labels_path:
            raise ValueError("idx source needs data.path and data.labels_path")
        return load_idx(cfg.path, cfg.labels_path)
    if cfg.source == "csv":
        if not cfg.path:
            raise ValueError("csv source needs data.path")
        return load_csv(cfg.path)
    raise ValueError(f"unknown data source {cfg.source!r}")


def build_spec(protocol: str, model, config: SimConfig, root: Dataset | None = None):
    if protocol == "rsa":
        return RsaSpec(model, config.rsa)
    if protocol == "cc":
        return CcSpec(model, config.cc)
    if protocol == "flt":
        if root is None:
            raise ValueError("flt needs a root dataset")
        return FltSpec(model, root, config.flt)
    raise ValueError(f"unknown protocol {protocol!r}")


def build_setup(config: SimConfig, dataset: Dataset | None = None) -> Setup:
    seed = config.seed
    data = dataset if dataset is not None else load_dataset(config.data, seed)
    train, test = data.split(config.data.test_fraction, seed)
    model = build_model(config.model.kind, data.dim, data.classes, config.model.hidden)
    root = None
    if config.protocol == "flt":
        rng = np.random.default_rng([seed, _S_ROOT])
        perm = rng.permutation(len(train))
        n_root = max(1, int(round(config.flt.root_fraction * len(train))))
        root, train = train.subset(np.sort(perm[:n_root])), train.subset(np.sort(perm[n_root:]))
    spec = build_spec(config.protocol, model, config, root)
    shards = partition(train, config.peers, seed, config.data.partition)
    mal_rng = np.random.default_rng([seed, _S_MALICIOUS])
    malicious = sorted((mal_rng.choice(config.peers, size=config.attack.f, replace=False) + 1).tolist())
    peers = {}
    for pid in range(1, config.peers + 1):
        shard = shards[pid - 1]
        bad = pid in malicious
        if bad and config.attack.kind == "lf":
            shard = flip_labels(shard)
        peers[pid] = Peer(pid, shard, np.random.default_rng([seed, _S_PEER, pid]), malicious=bad)
    w0 = model.init_params(np.random.default_rng([seed, _S_INIT]))
    return Setup(spec, model, peers, train, test, w0, malicious)


def _worker_pool():
    try:
        threads = int(os.environ.get("P2PAGG_THREADS", "1"))
    except ValueError:
        threads = 1
    return ThreadPoolExecutor(max_workers=threads) if threads > 1 else None


def _plaintext_round(setup: Setup, config: SimConfig, w, k, dropped, executor):
    spec = setup.spec
    tr = RoundTranscript(round=k, protocol=spec.name)
    ctx = spec.round_context(w, k)
    if ctx is None:
        tr.skipped = True
        tr.w_digest = weights_digest(w)
        return w.copy(), tr
    clients = [p for p in sorted(setup.peers) if p not in dropped]
    tr.clients = clients
    tr.dropped_clients = sorted(dropped)
    tr.context = ctx
    try:
        updates = compute_updates(spec, setup.peers, clients, ctx, config.attack, executor)
    except RoundAbort as exc:
        tr.aborted, tr.abort_reason = True, str(exc)
        tr.w_digest = weights_digest(w)
        return w.copy(), tr
    us = [updates[c] for c in clients]
    tr.accepted = clients
    tr.accepted_updates = us
    new_w = plaintext_update(spec, us, ctx) if config.engine == "plaintext" else spec.real_aggregate(us, ctx)
    tr.w_digest = weights_digest(new_w)
    return new_w, tr


def run_simulation(config: SimConfig, dataset: Dataset | None = None, keep_weights: bool = False) -> SimResult:
    setup = build_setup(config, dataset)
    result = SimResult(config, malicious=setup.malicious)
    w = setup.w0.copy()
    mailbox = Mailbox()
    executor = _worker_pool()
    try:
        for k in range(config.rounds):
            drop_rng = np.random.default_rng([config.seed, _S_DROP, k])
            dropped = frozenset()
            if config.client_drop > 0:
                mask = drop_rng.random(config.peers) < config.client_drop
                dropped = frozenset((np.flatnonzero(mask) + 1).tolist())
            if config.engine == "secure":
                opts = RoundOptions(
                    committee_size=config.committee_size,
                    dzk_policy=config.dzk_policy,
                    reveal_check=config.reveal_check,
                    subsample=config.subsample,
                    dropped_clients=dropped,
                    committee_drop_fraction=config.committee_drop,
                    drop_rng=drop_rng,
                    tamper=[ev for ev in config.tamper if ev.round == k],
                    attack=config.attack,
                    executor=executor,
                )
                round_rng = np.random.default_rng([config.seed, _S_ROUND, k])
                w, tr = run_round(setup.spec, setup.peers, config.committee, w, round_rng, k, opts, mailbox)
            else:
                w, tr = _plaintext_round(setup, config, w, k, dropped, executor)
            result.transcripts.append(tr)
            result.accuracy.append(setup.model.accuracy(w, setup.test))
            result.bytes_per_round.append(tr.bytes_total)
            result.fr_cpu_seconds.append(tr.fr_cpu_seconds)
            if keep_weights:
                result.weights.append(w.copy())
            if tr.aborted and config.halt_on_abort:
                break
    finally:
        if executor is not None:
            executor.shutdown()
    result.final_w = w
    return result


def inject_committee_tampering(config: SimConfig, round: int, member: int, delta: int) -> SimConfig:
    """Copy of ``config`` in which committee position ``member`` offsets its
    opened share in ``round`` by ``delta``."""
    return replace(config, tamper=list(config.tamper) + [TamperEvent(round, member, delta)])


# -- outputs ------------------------------------------------------------------------------


SUMMARY_FIELDS = ["round", "accuracy", "bytes_total", "aborts", "flagged", "seed", "config_hash"]
TIMING_FIELDS = ["round", "fr_cpu_seconds", "seed", "config_hash"]


def summary_rows(result: SimResult) -> list[dict]:
    cfg = result.config
    digest = cfg.digest()
    rows = []
    for tr, acc in zip(result.transcripts, result.accuracy):
        rows.append({
            "round": tr.round,
            "accuracy": f"{acc:.6f}",
            "bytes_total": tr.bytes_total,
            "aborts": int(tr.aborted),
            "flagged": len(tr.flagged),
            "seed": cfg.seed,
            "config_hash": digest,
        })
    return rows


def write_outputs(result: SimResult, outdir) -> None:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "transcripts.ndjson", "w") as fh:
        for tr in result.transcripts:
            fh.write(json.dumps(tr.to_json(), sort_keys=True) + "\n")
    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        writer.writeheader()
        writer.writerows(summary_rows(result))
    digest = result.config.digest()
    with open(out / "timings.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TIMING_FIELDS)
        writer.writeheader()
        for tr in result.transcripts:
            writer.writerow({"round": tr.round, "fr_cpu_seconds": f"{tr.fr_cpu_seconds:.9f}",
                             "seed": result.config.seed, "config_hash": digest})
    np.save(out / "final_weights.npy", result.final_w)
