"""Per-channel delay models, partial synchrony, and fault windows.

Before the stabilization time the adversary schedule applies: seeded
arbitrary delays (optionally drops).  From stabilization on, honest
pairs see a sampled delay bounded by the configured distribution, subject
to explicit glitch windows (egress drop rates, partitions) from the fault
plan.  Self-addressed copies of a multicast traverse the same one-hop
delay but are exempt from drops and egress queuing.

An optional per-channel bandwidth models egress serialization: each
outgoing copy occupies the sender's link for size/bandwidth time units
before its one-way delay starts, which is what lets bulk data traffic
queue without disturbing the consensus channel.
"""

from __future__ import annotations

from random import Random
from typing import Optional

from ..messages import (CHANNEL_CONSENSUS, CHANNEL_DATA, CHANNEL_QS, MBatch,
                        MFetchResponse)


class DelayModel:
    """One-way delay distribution for a single channel."""

    def __init__(self, kind: str = "fixed", value: float = 1.0,
                 lo: float = 0.0, hi: float = 1.0,
                 matrix=None, regions=None):
        self.kind = kind
        self.value = value
        self.lo = lo
        self.hi = hi
        self.matrix = matrix
        self.regions = regions
        if kind not in ("fixed", "uniform", "matrix"):
            raise ValueError(f"unknown delay kind {kind!r}")

    def max_delay(self) -> float:
        if self.kind == "fixed":
            return self.value
        if self.kind == "uniform":
            return self.hi
        return max(max(row) for row in self.matrix)

    def sample(self, sender: int, receiver: int, rng: Random) -> float:
        if self.kind == "fixed":
            return self.value
        if self.kind == "uniform":
            return rng.uniform(self.lo, self.hi)
        return self.matrix[self.regions[sender]][self.regions[receiver]]


class DropWindow:
    """Egress drop glitch: `rate` of messages from `replicas` in [start, end)."""

    def __init__(self, replicas: Optional[frozenset[int]], rate: float,
                 start: float, end: float):
        self.replicas = replicas  # None means every replica
        self.rate = rate
        self.start = start
        self.end = end

    def applies(self, sender: int, now: float) -> bool:
        return (self.start <= now < self.end
                and (self.replicas is None or sender in self.replicas))


class Partition:
    def __init__(self, groups: list[frozenset[int]], start: float, end: float):
        self.start = start
        self.end = end
        self.group_of: dict[int, int] = {}
        for gi, group in enumerate(groups):
            for rid in group:
                self.group_of[rid] = gi

    def cuts(self, sender: int, receiver: int, now: float) -> bool:
        if not (self.start <= now < self.end):
            return False
        gs = self.group_of.get(sender)
        gr = self.group_of.get(receiver)
        return gs is not None and gr is not None and gs != gr


def wire_size(msg) -> int:
    """Coarse message size used only when a channel bandwidth is configured."""
    if isinstance(msg, MBatch):
        return 100 + sum(tx[2] for tx in msg.batch.txs)
    if isinstance(msg, MFetchResponse) and msg.kind == "batch":
        return 100 + sum(tx[2] for tx in msg.item.txs)
    return 200


class NetworkModel:
    """Samples one-way delivery delays; returns None for a dropped message."""

    def __init__(self, n: int, delta: float, delays: dict[str, DelayModel],
                 gst: float = 0.0, pre_gst_max_delay: float = 0.0,
                 pre_gst_drop: float = 0.0,
                 drop_windows: tuple[DropWindow, ...] = (),
                 partitions: tuple[Partition, ...] = (),
                 bandwidth: Optional[dict[str, float]] = None,
                 rng: Optional[Random] = None):
        self.n = n
        self.delta = delta
        self.delays = delays
        self.gst = gst
        self.pre_gst_max_delay = pre_gst_max_delay
        self.pre_gst_drop = pre_gst_drop
        self.drop_windows = drop_windows
        self.partitions = partitions
        self.bandwidth = bandwidth or {}
        self.rng = rng if rng is not None else Random(0)
        self._busy_until: dict[tuple[int, str], float] = {}
        self.sent = 0
        self.dropped = 0

    def glitch_free_after(self) -> float:
        """Earliest time from which no configured glitch window is active."""
        t = self.gst
        for w in self.drop_windows:
            t = max(t, w.end)
        for p in self.partitions:
            t = max(t, p.end)
        return t

    def delivery_delay(self, sender: int, receiver: int, channel: str,
                       now: float, size: int) -> Optional[float]:
        self.sent += 1
        rng = self.rng
        loopback = sender == receiver
        if now < self.gst and not loopback:
            # Adversary-scheduled period: arbitrary (seeded) delays and drops.
            if self.pre_gst_drop > 0 and rng.random() < self.pre_gst_drop:
                self.dropped += 1
                return None
            cap = max(self.pre_gst_max_delay, self.delays[channel].max_delay())
            return rng.uniform(0.0, cap) if cap > 0 else 0.0
        if not loopback:
            for window in self.drop_windows:
                if window.applies(sender, now) and rng.random() < window.rate:
                    self.dropped += 1
                    return None
            for partition in self.partitions:
                if partition.cuts(sender, receiver, now):
                    self.dropped += 1
                    return None
        delay = self.delays[channel].sample(sender, receiver, rng)
        queue = 0.0
        bw = self.bandwidth.get(channel)
        if bw and not loopback:
            ser = size / bw
            key = (sender, channel)
            start = max(self._busy_until.get(key, 0.0), now)
            self._busy_until[key] = start + ser
            queue = (start + ser) - now
        return queue + delay


def network_stats(net: NetworkModel) -> dict:
    return {"messages_sent": net.sent, "messages_dropped": net.dropped}
