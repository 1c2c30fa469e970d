"""Sign-based robust aggregation: clients vote per coordinate with one bit."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import field
from ..core import AggregationSpec, CheckSpec, Peer, RoundContext
from ..learner import sample_batch


@dataclass(frozen=True)
class RsaParams:
    lam: float = 0.05
    eta0: float = 0.01
    gamma: float = 0.001
    rho: float = 0.0

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        if self.eta0 <= 0 or self.gamma < 0:
            raise ValueError("need eta0 > 0 and gamma >= 0")

    def eta(self, k: int) -> float:
        return self.eta0 / (1.0 + self.gamma * k)


def sign_bits(u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Bit ``(s + 1) / 2`` of ``s = sign(w - u)``, counting a tie as ``+1``."""
    return (np.asarray(w, dtype=np.float64) - np.asarray(u, dtype=np.float64) >= 0).astype(np.int64)


class RsaSpec(AggregationSpec):
    name = "rsa"
    depth = 1

    def __init__(self, model, params: RsaParams = RsaParams()):
        self.model = model
        self.params = params

    def client_update(self, peer: Peer, ctx: RoundContext) -> np.ndarray:
        x = peer.state.get("x")
        if x is None:
            x = ctx.w.copy()
        idx = sample_batch(peer.rng, len(peer.data))
        g = self.model.grad(x, peer.data.X[idx], peer.data.y[idx])
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient at peer {peer.peer_id}")
        lr = self.params.eta(ctx.round)
        peer.state["x"] = x - lr * (g + self.params.lam * np.sign(x - ctx.w))
        return x.copy()

    def layout(self, ctx):
        return [("bits", ctx.w.size)]

    def preprocess(self, u, ctx):
        return {"bits": sign_bits(u, ctx.w)}

    def in_domain(self, v, ctx) -> bool:
        b = np.asarray(v["bits"])
        return b.shape == (ctx.w.size,) and bool(np.all((b == 0) | (b == 1)))

    def checks(self, ctx):
        return [CheckSpec("binary", "bits")]

    def member_aggregate(self, parts, t):
        return [("sums", field.vsum(parts["bits"], axis=1), t)]

    def plaintext_aggregate(self, vs: Sequence[dict], ctx):
        return {"sums": np.sum([v["bits"] for v in vs], axis=0, dtype=np.int64)}

    def postprocess(self, revealed, ctx, n_clients):
        S = np.asarray(revealed["sums"], dtype=np.int64)
        if np.any(S < 0) or np.any(S > n_clients):
            raise ValueError("per-coordinate vote count outside [0, n]")
        p = self.params
        votes = 2 * S - n_clients
        return ctx.w - p.eta(ctx.round) * (p.rho * ctx.w + p.lam * votes)

    def preimage(self, v, ctx):
        return ctx.w - (2 * np.asarray(v["bits"], dtype=np.float64) - 1)

    def sample_valid(self, ctx, rng):
        return {"bits": rng.integers(0, 2, size=ctx.w.size)}
