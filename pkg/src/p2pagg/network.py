"""In-process point-to-point network with per-peer FIFO mailboxes.

Stands in for authenticated private channels. Delivery order is the order
of ``send`` calls, which the round driver issues in peer-id order, so a run
is reproducible byte for byte. Every payload is counted once on the sender
and once on the receiver.
"""

from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Iterable


@dataclass(frozen=True)
class Message:
    sender: int
    payload: bytes
    round: int
    phase: str


class Mailbox:
    def __init__(self):
        self._queues: dict[int, deque[Message]] = defaultdict(deque)
        self.sent_bytes: dict[int, int] = defaultdict(int)
        self.received_bytes: dict[int, int] = defaultdict(int)
        self.offline: set[int] = set()

    def send(self, sender: int, recipient: int, payload: bytes, round: int, phase: str) -> None:
        if sender in self.offline:
            return
        payload = bytes(payload)
        self.sent_bytes[sender] += len(payload)
        if recipient in self.offline:
            return
        self.received_bytes[recipient] += len(payload)
        self._queues[recipient].append(Message(sender, payload, round, phase))

    def broadcast(self, sender: int, recipients: Iterable[int], payload: bytes, round: int, phase: str) -> None:
        for r in recipients:
            if r != sender:
                self.send(sender, r, payload, round, phase)

    def drain(self, recipient: int, phase: str | None = None) -> list[Message]:
        """Remove and return queued messages, optionally only one phase's."""
        q = self._queues[recipient]
        if phase is None:
            out = list(q)
            q.clear()
            return out
        out = [m for m in q if m.phase == phase]
        if out:
            self._queues[recipient] = deque(m for m in q if m.phase != phase)
        return out

    def pending(self) -> int:
        return sum(len(q) for q in self._queues.values())

    def total_bytes(self) -> int:
        return sum(self.sent_bytes.values())

    def reset_counters(self) -> None:
        self.sent_bytes.clear()
        self.received_bytes.clear()
