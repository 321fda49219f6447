"""Parallel batch dissemination, availability proofs, and fetch plumbing.

Every replica runs the same store: it broadcasts its own batches, votes on
other replicas' batches, forms availability proofs at a vote quorum, and
serves fetch requests for content it holds.  The store also owns the
candidate pools a leader draws on when assembling a block payload.
"""

from __future__ import annotations

from collections import deque
from random import Random
from typing import Optional

from .config import ProtocolConfig
from .messages import (FETCH_BATCH, FETCH_BLOCK, MFetchRequest)
from .types import Batch, BatchInfo, Block, BlockPayload, ProofOfAvailability


class FetchManager:
    """Outstanding fetch requests with deterministic hint rotation and retry."""

    RETRY_BASE = 2.0  # multiples of the network bound per attempt

    def __init__(self, rid: int, ctx, config: ProtocolConfig, rng: Random):
        self.rid = rid
        self.ctx = ctx
        self.config = config
        self.rng = rng
        self.inflight: dict[tuple[str, bytes], dict] = {}
        self.requests_sent = 0

    def want(self, kind: str, key: bytes, hints) -> None:
        entry = self.inflight.get((kind, key))
        if entry is not None:
            known = entry["hints"]
            for h in hints:
                if h != self.rid and h not in known:
                    known.append(h)
            return
        order = [h for h in dict.fromkeys(hints) if h != self.rid]
        if not order:
            order = [r for r in range(self.config.n) if r != self.rid]
        self.rng.shuffle(order)
        entry = {"hints": order, "pos": 0, "tries": 0, "gen": 0}
        self.inflight[(kind, key)] = entry
        self._fire(kind, key, entry)

    def _fire(self, kind: str, key: bytes, entry) -> None:
        target = entry["hints"][entry["pos"] % len(entry["hints"])]
        self.ctx.send(target, MFetchRequest(kind, key))
        self.requests_sent += 1
        rotations = entry["tries"] // len(entry["hints"])
        delay = self.RETRY_BASE * self.config.delta * min(2 ** rotations, 4)
        self.ctx.set_timer(delay, ("fetch", kind, key, entry["gen"]))

    def satisfied(self, kind: str, key: bytes) -> None:
        self.inflight.pop((kind, key), None)

    def on_timer(self, kind: str, key: bytes, gen: int) -> None:
        entry = self.inflight.get((kind, key))
        if entry is None or entry["gen"] != gen:
            return
        entry["tries"] += 1
        entry["pos"] += 1
        entry["gen"] += 1
        self._fire(kind, key, entry)


class QuorumStore:
    """Per-replica batch, proof, and vote bookkeeping."""

    def __init__(self, rid: int, config: ProtocolConfig):
        self.rid = rid
        self.config = config
        self.batches: dict[bytes, Batch] = {}          # content held locally
        self.candidates: dict[bytes, BatchInfo] = {}   # proposable, no proof yet
        self.poa_pool: dict[bytes, ProofOfAvailability] = {}
        self.my_batches: dict[int, Batch] = {}
        self.poa_votes: dict[int, dict] = {}           # sn -> signer -> partial
        self.delivered: set[bytes] = set()
        self.voted: set[bytes] = set()
        self.seen_sn: dict[tuple[int, int], bytes] = {}
        self.equivocators: set[int] = set()
        self.mempool: deque = deque()
        self.next_sn = 1
        self.strikes: dict[int, int] = {}

    # -- local batch creation -------------------------------------------

    def take_batch_txs(self) -> list:
        txs = []
        cap = self.config.batch_capacity
        while self.mempool and len(txs) < cap:
            txs.append(self.mempool.popleft())
        return txs

    def allocate_sn(self) -> int:
        sn = self.next_sn
        self.next_sn += 1
        return sn

    # -- content tracking ------------------------------------------------

    def add_content(self, batch: Batch, proposable: bool) -> bool:
        """Store batch content; returns True when it is new."""
        digest = batch.info.digest
        if digest in self.batches:
            return False
        self.batches[digest] = batch
        if proposable and digest not in self.delivered:
            self.candidates[digest] = batch.info
        return True

    def add_poa(self, poa: ProofOfAvailability) -> bool:
        if poa.batch_hash in self.poa_pool or poa.batch_hash in self.delivered:
            return poa.batch_hash not in self.batches
        self.poa_pool[poa.batch_hash] = poa
        return poa.batch_hash not in self.batches

    def mark_delivered(self, digest: bytes) -> None:
        self.delivered.add(digest)
        self.candidates.pop(digest, None)
        self.poa_pool.pop(digest, None)

    def strike(self, sender: int) -> None:
        self.strikes[sender] = self.strikes.get(sender, 0) + 1

    # -- payload assembly -------------------------------------------------

    def available_prefix(self, block: Block) -> int:
        """Longest run of complete sub-blocks held locally, 0..M."""
        held = self.batches
        k = 0
        for group in block.payload.sub_blocks:
            for info in group:
                if info.digest not in held:
                    return k
            k += 1
        return k

    def missing_digests(self, block: Block) -> list[bytes]:
        held = self.batches
        out = [p.batch_hash for p in block.payload.poas if p.batch_hash not in held]
        for info in block.payload.optimistic_infos():
            if info.digest not in held:
                out.append(info.digest)
        return out

    def build_payload(self, exclusions: set, now: float, poas_only: bool) -> BlockPayload:
        """Proofs plus aged optimistic batches, none already in the parent chain."""
        cfg = self.config
        poas = sorted(
            (poa for d, poa in self.poa_pool.items() if d not in exclusions),
            key=lambda p: (p.author, p.sn),
        )
        m = cfg.sub_blocks
        groups: list[list[BatchInfo]] = [[] for _ in range(m)]
        if not poas_only:
            infos = sorted(
                (info for d, info in self.candidates.items()
                 if d not in exclusions
                 and d not in self.poa_pool
                 and info.author not in self.equivocators
                 and now - info.created_at >= cfg.min_batch_age),
                key=lambda i: (i.author, i.sn),
            )
            count = len(infos)
            base, extra = divmod(count, m)
            pos = 0
            for g in range(m):
                size = base + (1 if g < extra else 0)
                groups[g] = infos[pos:pos + size]
                pos += size
        return BlockPayload(poas, groups)
