"""Per-batch / per-transaction latency decomposition and run aggregates.

Latency is measured per batch: dissemination runs from the batch broadcast
to the first honest proposal referencing it (directly or via an
availability proof), consensus runs from that proposal to the last honest
delivery, and ordering is their sum.  The submit-to-batch wait is kept as
its own sub-metric so pure hop-count checks can exclude it.
"""

from __future__ import annotations

import math
from typing import Optional

from .types import Batch, BatchRef, Block, ProofOfAvailability


class LifecycleError(ValueError):
    """An event arrived out of causal order for a transaction record."""


class BatchRecord:
    __slots__ = ("author", "sn", "digest", "broadcast_at", "tx_submits",
                 "tx_sizes", "first_proposed_at", "proposed_kind",
                 "poa_formed_at", "first_delivered_at", "committing_round",
                 "honest_deliveries", "last_honest_delivery")

    def __init__(self, author, sn, digest, broadcast_at, tx_submits, tx_sizes):
        self.author = author
        self.sn = sn
        self.digest = digest
        self.broadcast_at = broadcast_at
        self.tx_submits = tx_submits
        self.tx_sizes = tx_sizes
        self.first_proposed_at: Optional[float] = None
        self.proposed_kind: Optional[str] = None
        self.poa_formed_at: Optional[float] = None
        self.first_delivered_at: Optional[float] = None
        self.committing_round: Optional[int] = None
        self.honest_deliveries = 0
        self.last_honest_delivery: Optional[float] = None

    @property
    def tx_count(self) -> int:
        return len(self.tx_submits)


def _percentile(sorted_values, q: float) -> float:
    if not sorted_values:
        return math.nan
    idx = max(0, math.ceil(q * len(sorted_values)) - 1)
    return sorted_values[idx]


class MetricsCollector:
    """Owned by the simulation loop; hooks are called in virtual-time order."""

    def __init__(self, honest_replicas: frozenset[int]):
        self.honest = honest_replicas
        self.records: dict[bytes, BatchRecord] = {}
        self._pending_submits: dict[tuple[int, int], float] = {}
        self.submitted_txs = 0
        self.fetch_requests = 0
        self.round_first_delivery: dict[int, float] = {}
        self.tc_vote_rounds: set[int] = set()
        self.max_round_entered = 0

    # -- lifecycle hooks ---------------------------------------------------

    def note_submit(self, origin: int, index: int, time: float) -> None:
        self._pending_submits[(origin, index)] = time
        self.submitted_txs += 1

    def note_broadcast(self, batch: Batch) -> None:
        submits = []
        sizes = []
        for tx in batch.txs:
            submits.append(self._pending_submits.pop((tx[0], tx[1]), batch.info.created_at))
            sizes.append(tx[2])
        self.records[batch.info.digest] = BatchRecord(
            batch.info.author, batch.info.sn, batch.info.digest,
            batch.info.created_at, submits, sizes)

    def note_poa(self, poa: ProofOfAvailability, time: float) -> None:
        record = self.records.get(poa.batch_hash)
        if record is not None and record.poa_formed_at is None:
            record.poa_formed_at = time

    def note_proposed(self, block: Block, time: float) -> None:
        for poa in block.payload.poas:
            record = self.records.get(poa.batch_hash)
            if record is not None and record.first_proposed_at is None:
                record.first_proposed_at = time
                record.proposed_kind = "poa"
        for info in block.payload.optimistic_infos():
            record = self.records.get(info.digest)
            if record is not None and record.first_proposed_at is None:
                record.first_proposed_at = time
                record.proposed_kind = "optimistic"

    def note_deliver(self, rid: int, ref: BatchRef, time: float, round_no: int) -> None:
        record = self.records.get(ref.digest)
        if record is not None:
            if record.first_delivered_at is None:
                # first_proposed_at may stay unset when only a faulty leader
                # ever proposed this batch; such records count as incomplete.
                record.first_delivered_at = time
                record.committing_round = round_no
            if rid in self.honest:
                record.honest_deliveries += 1
                record.last_honest_delivery = time
        if self.round_first_delivery.setdefault(round_no, time) > time:
            self.round_first_delivery[round_no] = time

    def record_lifecycle_event(self, digest: bytes, kind: str, time: float,
                               replica: int = -1) -> BatchRecord:
        """Generic entry point mirroring the per-record update surface."""
        record = self.records.get(digest)
        if record is None:
            raise LifecycleError(f"unknown batch record {digest!r}")
        order = ("broadcast", "proposed", "delivered")
        current = {
            "broadcast": record.broadcast_at,
            "proposed": record.first_proposed_at,
            "delivered": record.first_delivered_at,
        }
        if kind not in order:
            raise LifecycleError(f"unknown lifecycle event {kind!r}")
        for earlier in order[: order.index(kind)]:
            prior = current[earlier]
            if prior is None or prior > time:
                raise LifecycleError(f"{kind} at {time} precedes {earlier}")
        if kind == "proposed" and record.first_proposed_at is None:
            record.first_proposed_at = time
        elif kind == "delivered":
            self.note_deliver(replica, BatchRef(digest, record.sn, record.author),
                              time, record.committing_round or 0)
        return record

    # -- aggregation --------------------------------------------------------

    def complete_records(self) -> list[BatchRecord]:
        want = len(self.honest)
        return [r for r in self.records.values()
                if r.first_proposed_at is not None
                and r.honest_deliveries >= want]

    def aggregate(self, horizon: float, trim: float = 0.1) -> dict:
        lo, hi = horizon * trim, horizon * (1 - trim)
        ordering: list[float] = []
        inclusion: list[float] = []
        delivered_txs = 0
        complete = 0
        for record in self.records.values():
            if record.first_proposed_at is None or record.last_honest_delivery is None:
                continue
            if record.honest_deliveries < len(self.honest):
                continue
            complete += 1
            if not (lo <= record.broadcast_at <= hi):
                continue
            latency = record.last_honest_delivery - record.broadcast_at
            ordering.extend([latency] * record.tx_count)
            inclusion.extend(record.broadcast_at - s for s in record.tx_submits)
            if lo <= record.last_honest_delivery <= hi:
                delivered_txs += record.tx_count
        ordering.sort()
        window = max(hi - lo, 1e-9)
        rounds_in_window = [r for r, t in self.round_first_delivery.items()
                            if lo <= t <= hi]
        starved = sum(1 for r in self.records.values()
                      if r.first_proposed_at is None)
        return {
            "complete_batches": complete,
            "total_batches": len(self.records),
            "submitted_txs": self.submitted_txs,
            "ordering_p25": _percentile(ordering, 0.25),
            "ordering_p50": _percentile(ordering, 0.50),
            "ordering_p75": _percentile(ordering, 0.75),
            "ordering_mean": (sum(ordering) / len(ordering)) if ordering else math.nan,
            "batch_inclusion_mean": (sum(inclusion) / len(inclusion))
                                    if inclusion else math.nan,
            "throughput": delivered_txs / window,
            "block_rate": len(rounds_in_window) / window,
            "tc_round_count": len(self.tc_vote_rounds),
            "rounds_entered": self.max_round_entered,
            "starved_batches": starved,
            "fetch_requests": self.fetch_requests,
        }

    def hop_counts(self, delta_msg: float, trim_horizon: Optional[float] = None,
                   trim: float = 0.1) -> dict:
        """Per-phase message-delay counts; only valid for fixed-delay networks."""
        if delta_msg <= 0:
            raise ValueError("hop-count mode requires a fixed positive message delay")
        lo = hi = None
        if trim_horizon is not None:
            lo, hi = trim_horizon * trim, trim_horizon * (1 - trim)
        diss, incl, cons, order = [], [], [], []
        for record in self.complete_records():
            if lo is not None and not (lo <= record.broadcast_at <= hi):
                continue
            d = (record.first_proposed_at - record.broadcast_at) / delta_msg
            c = (record.last_honest_delivery - record.first_proposed_at) / delta_msg
            if record.proposed_kind == "poa" and record.poa_formed_at is not None:
                ready = record.poa_formed_at + delta_msg
            else:
                ready = record.broadcast_at + delta_msg
            i = (record.first_proposed_at - ready) / delta_msg
            weight = record.tx_count
            diss.extend([d] * weight)
            incl.extend([i] * weight)
            cons.extend([c] * weight)
            order.extend([d + c] * weight)
        def mean(xs):
            return sum(xs) / len(xs) if xs else math.nan
        return {
            "samples": len(order),
            "dissemination_hops_mean": mean(diss),
            "inclusion_hops_mean": mean(incl),
            "consensus_hops_mean": mean(cons),
            "consensus_hops_min": min(cons) if cons else math.nan,
            "consensus_hops_max": max(cons) if cons else math.nan,
            "ordering_hops_mean": mean(order),
        }
