"""Centered box clipping: clip each client's step to ``[-tau, tau]^d``, encode it
as ``theta`` unsigned bits per coordinate, and sum bit positions in shares."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import field
from ..codec import FixedPointCodec, bits_to_int, int_to_bits
from ..core import AggregationSpec, CheckSpec, Peer, RoundContext
from ..learner import sample_batch


@dataclass(frozen=True)
class CcParams:
    beta: float = 0.9
    tau: float = 0.05
    theta: int = 32
    eta: float = 1.0
    lr: float = 0.1

    def __post_init__(self):
        if not 0 <= self.beta < 1:
            raise ValueError("beta must lie in [0, 1)")
        if self.tau <= 0:
            raise ValueError("tau must be positive")


class CcSpec(AggregationSpec):
    name = "cc"
    depth = 1

    def __init__(self, model, params: CcParams = CcParams()):
        self.model = model
        self.params = params
        self.codec = FixedPointCodec(params.theta, mode="box", lo=-params.tau, hi=params.tau)

    def client_update(self, peer: Peer, ctx: RoundContext) -> np.ndarray:
        """Momentum SGD step from the global model; returns the proposed parameters."""
        p = self.params
        mom = peer.state.get("momentum")
        if mom is None:
            mom = np.zeros_like(ctx.w)
        idx = sample_batch(peer.rng, len(peer.data))
        g = self.model.grad(ctx.w, peer.data.X[idx], peer.data.y[idx])
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient at peer {peer.peer_id}")
        mom = (1 - p.beta) * g + p.beta * mom
        peer.state["momentum"] = mom
        return ctx.w - p.lr * mom

    def quantize(self, u, ctx) -> np.ndarray:
        q, _ = self.codec.encode(np.asarray(u, dtype=np.float64) - ctx.w)
        return q

    def layout(self, ctx):
        return [("bits", ctx.w.size * self.params.theta)]

    def preprocess(self, u, ctx):
        return {"bits": int_to_bits(self.quantize(u, ctx), self.params.theta).astype(np.int64)}

    def in_domain(self, v, ctx) -> bool:
        b = np.asarray(v["bits"])
        return b.shape == (ctx.w.size * self.params.theta,) and bool(np.all((b == 0) | (b == 1)))

    def checks(self, ctx):
        return [CheckSpec("binary", "bits")]

    def member_aggregate(self, parts, t):
        return [("bit_sums", field.vsum(parts["bits"], axis=1), t)]

    def plaintext_aggregate(self, vs: Sequence[dict], ctx):
        return {"bit_sums": np.sum([v["bits"] for v in vs], axis=0, dtype=np.int64)}

    def recompose(self, bit_sums, n_clients: int) -> np.ndarray:
        """Per-coordinate sums of the clients' quantised values."""
        S = np.asarray(bit_sums, dtype=np.int64).reshape(-1, self.params.theta)
        if np.any(S < 0) or np.any(S > n_clients):
            raise ValueError("bit-position sum outside [0, n]")
        s = (S.astype(np.uint64) << np.arange(self.params.theta, dtype=np.uint64)).sum(axis=1, dtype=np.uint64)
        assert n_clients * self.codec.levels < field.P
        return s

    def postprocess(self, revealed, ctx, n_clients):
        s = self.recompose(revealed["bit_sums"], n_clients)
        tau = self.params.tau
        mean_step = (s.astype(np.float64) / n_clients) / self.codec.levels * (2 * tau) - tau
        if np.any(np.abs(mean_step) > tau * (1 + 1e-12)):
            raise AssertionError("decoded mean step escaped the clipping box")
        return ctx.w + self.params.eta * mean_step

    def preimage(self, v, ctx):
        q = bits_to_int(v["bits"], self.params.theta).astype(np.int64)
        u = ctx.w + self.codec.decode(q)
        # float rounding can land one level off; walk those coordinates by ulps
        for _ in range(64):
            got = self.quantize(u, ctx)
            off = got != q
            if not off.any():
                break
            u[off] = np.nextafter(u[off], np.where(got[off] < q[off], np.inf, -np.inf))
        return u

    def sample_valid(self, ctx, rng):
        q = rng.integers(0, self.codec.levels, size=ctx.w.size, endpoint=True, dtype=np.uint64)
        return {"bits": int_to_bits(q, self.params.theta).astype(np.int64)}

    def real_aggregate(self, us, ctx):
        tau = self.params.tau
        steps = [np.clip(np.asarray(u) - ctx.w, -tau, tau) for u in us]
        return ctx.w + self.params.eta * np.mean(steps, axis=0)
