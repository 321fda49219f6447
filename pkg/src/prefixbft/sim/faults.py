"""Fault plan: crashes, adversarial corruptions, and network glitches."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .network import DropWindow, Partition

ADVERSARY_BEHAVIORS = (
    "equivocating_proposer",
    "selective_batch_sender",
    "silent",
    "vote_withholder",
    "stale_vote_replayer",
)


@dataclass(frozen=True)
class Crash:
    replica: int
    at: float


@dataclass(frozen=True)
class Corruption:
    replica: int
    behavior: str
    at: float = 0.0
    params: dict = field(default_factory=dict)


@dataclass
class FaultPlan:
    crashes: tuple[Crash, ...] = ()
    corruptions: tuple[Corruption, ...] = ()
    drop_windows: tuple[DropWindow, ...] = ()
    partitions: tuple[Partition, ...] = ()

    def faulty_replicas(self) -> frozenset[int]:
        return frozenset(c.replica for c in self.crashes) | frozenset(
            c.replica for c in self.corruptions)

    def validate(self, n: int, f: int) -> None:
        budget = self.faulty_replicas()
        if len(budget) > f:
            raise ValueError(
                f"fault plan corrupts or crashes {len(budget)} replicas, "
                f"budget is f={f}")
        for rid in budget:
            if not (0 <= rid < n):
                raise ValueError(f"fault plan names replica {rid} outside 0..{n - 1}")
        for c in self.corruptions:
            if c.behavior not in ADVERSARY_BEHAVIORS:
                raise ValueError(f"unknown adversary behavior {c.behavior!r}")

    def glitch_windows(self) -> list[tuple[float, float]]:
        spans = [(w.start, w.end) for w in self.drop_windows]
        spans.extend((p.start, p.end) for p in self.partitions)
        return spans
