"""Adversarial replica behaviors.

Every behavior runs the honest code until its activation time and may only
use its own key shares and whatever it has observed: nothing here forges a
signature.  The `silent` behavior is enforced by the simulation loop
(nothing in, nothing out), so it needs no subclass.
"""

from __future__ import annotations

from collections import deque
from random import Random

from ..messages import MPropose, MQCVote, qc_vote_msg
from ..replica import Replica
from ..types import Block


class AdversarialReplica(Replica):
    def __init__(self, *args, activate_at: float = 0.0, params=None, **kwargs):
        super().__init__(*args, **kwargs)
        self.activate_at = activate_at
        self.params = params or {}
        self.adv_rng = Random(f"adv|{self.rid}")

    @property
    def active(self) -> bool:
        return self.ctx.time >= self.activate_at

    def seed_rng(self, seed: str) -> None:
        self.adv_rng = Random(f"{seed}|adv|{self.rid}")


class EquivocatingProposer(AdversarialReplica):
    """Leader sends two different blocks for its round and votes for both."""

    def _do_propose(self, reason) -> None:
        if not self.active:
            super()._do_propose(reason)
            return
        payload = self.store.build_payload(
            self._chain_exclusions(reason.qc), self.ctx.time, False)
        block_a = Block(self.r_cur, reason, payload)
        alt = self._alternate_payload(payload)
        if alt is None:
            super()._do_propose(reason)
            return
        block_b = Block(self.r_cur, reason, alt)
        for block in (block_a, block_b):
            block._verified = True
            self._add_block(block)
        half = self.config.n // 2
        for rid in range(self.config.n):
            self.ctx.send(rid, MPropose(block_a if rid < half else block_b))
        # Vote for both forks at the full prefix.
        m = self.config.sub_blocks
        for block in (block_a, block_b):
            partial = self.scheme.psign(
                self.rid, m, qc_vote_msg(block.digest, self.r_cur, m))
            self.ctx.multicast(MQCVote(self.r_cur, m, block.digest, partial))

    def _alternate_payload(self, payload):
        from ..types import BlockPayload
        if payload.poas:
            return BlockPayload(payload.poas[:-1], payload.sub_blocks)
        infos = [i for g in payload.sub_blocks for i in g]
        if not infos:
            return None  # nothing to equivocate about this round
        dropped = infos[:-1]
        m = len(payload.sub_blocks)
        base, extra = divmod(len(dropped), m)
        groups, pos = [], 0
        for g in range(m):
            size = base + (1 if g < extra else 0)
            groups.append(dropped[pos:pos + size])
            pos += size
        return BlockPayload((), groups)


class SelectiveBatchSender(AdversarialReplica):
    """Sends its batches only to a chosen subset and ignores fetch requests."""

    def _recipients(self) -> list[int]:
        chosen = self.params.get("recipients")
        if chosen is None:
            count = self.params.get("count", self.config.f + 1)
            chosen = list(range(count))
        return list(chosen)

    def _multicast_batch(self, batch) -> None:
        if not self.active:
            super()._multicast_batch(batch)
            return
        from ..messages import MBatch
        targets = set(self._recipients())
        targets.add(self.rid)
        for rid in sorted(targets):
            self.ctx.send(rid, MBatch(batch))

    def _on_fetch_request(self, sender, msg) -> None:
        if not self.active:
            super()._on_fetch_request(sender, msg)


class VoteWithholder(AdversarialReplica):
    """Participates in dissemination and proposing but never votes."""

    def _emit_qc_vote(self, msg) -> None:
        if not self.active:
            super()._emit_qc_vote(msg)

    def _emit_cc_vote(self, msg) -> None:
        if not self.active:
            super()._emit_cc_vote(msg)

    def _emit_tc_vote(self, msg) -> None:
        if not self.active:
            super()._emit_tc_vote(msg)

    def _emit_poa_vote(self, author, msg) -> None:
        if not self.active:
            super()._emit_poa_vote(author, msg)


class StaleVoteReplayer(AdversarialReplica):
    """Replays its own old votes and round-entry messages in later rounds."""

    REPLAY_PER_ROUND = 2
    MEMORY = 40

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._sent: deque = deque(maxlen=self.MEMORY)

    def _emit_qc_vote(self, msg) -> None:
        self._sent.append(msg)
        super()._emit_qc_vote(msg)

    def _emit_cc_vote(self, msg) -> None:
        self._sent.append(msg)
        super()._emit_cc_vote(msg)

    def _emit_tc_vote(self, msg) -> None:
        self._sent.append(msg)
        super()._emit_tc_vote(msg)

    def on_round_entered(self, round_no: int) -> None:
        if not self.active or not self._sent:
            return
        stock = list(self._sent)
        for _ in range(min(self.REPLAY_PER_ROUND, len(stock))):
            self.ctx.multicast(self.adv_rng.choice(stock))


BEHAVIOR_CLASSES = {
    "equivocating_proposer": EquivocatingProposer,
    "selective_batch_sender": SelectiveBatchSender,
    "vote_withholder": VoteWithholder,
    "stale_vote_replayer": StaleVoteReplayer,
}
