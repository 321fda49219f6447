"""The per-replica protocol state machine.

One replica consumes one event at a time (a message or a timer) and reacts
by sending messages, arming timers, and delivering committed batches.  All
certificates and partial signatures carried by a message are verified
before any state changes; invalid messages are dropped and the sender is
struck.

Round flow: a replica enters round r with a valid entry reason, the round
leader proposes a block over the reason's QC, replicas QC-vote on the
longest locally available prefix (up to twice: once when the vote timer
fires, once at full availability), a vote quorum forms a QC, QCs trigger
CC-votes, and a CC-vote quorum commits the minimum certified prefix while
the next round extends the maximum.  Timeouts produce TC-votes and a TC
advances the round without committing.
"""

from __future__ import annotations

from random import Random
from typing import Optional

from .config import ProtocolConfig
from .crypto import AggregateScheme
from .messages import (CHANNEL_CONSENSUS, FETCH_BATCH, FETCH_BLOCK, MAdvanceRound,
                       MBatch, MCCVote, MFetchRequest, MFetchResponse, MPoA,
                       MPoAVote, MPropose, MQCVote, MTCVote, cc_vote_msg,
                       poa_vote_msg, qc_vote_msg, tc_vote_msg)
from .quorum_store import FetchManager, QuorumStore
from .types import (BatchRef, Block, BlockRegistry, CCReason, CommitCertificate,
                    FullQCReason, MalformedCertificate, ProofOfAvailability,
                    QuorumCertificate, Rank, TCReason, TimeoutCertificate,
                    batch_digest, make_batch, qc_certified_prefix,
                    verify_entry_reason)
from .variants import VariantPolicy

VOTE_MAP_KEEP_ROUNDS = 2  # vote maps for rounds below r_cur - 2 are dropped


class Replica:
    """Honest replica; adversarial behaviors subclass and override hooks."""

    def __init__(self, rid: int, config: ProtocolConfig, scheme: AggregateScheme,
                 registry: BlockRegistry, genesis_qc: QuorumCertificate,
                 ctx, policy: VariantPolicy, fetch_rng: Optional[Random] = None):
        self.rid = rid
        self.config = config
        self.scheme = scheme
        self.registry = registry
        self.genesis_qc = genesis_qc
        self.ctx = ctx
        self.policy = policy

        # consensus state
        self.r_cur = 0
        self.r_timeout = 0
        self.entry_reason = None
        self.last_qc_vote = Rank(0, 0)
        self.cc_voted: dict[int, bool] = {}
        self.qc_high = genesis_qc
        self.qc_committed = genesis_qc
        self.proposal: dict[int, Block] = {}
        self.qc_votes: dict[int, dict[bytes, dict[int, tuple]]] = {}
        self.cc_votes: dict[int, dict[int, tuple]] = {}
        self.tc_votes: dict[int, dict[int, tuple]] = {}

        # timer generations (stale pops are ignored)
        self._qc_vote_gen = 0
        self._round_timer_gen = 0

        # quorum store and fetch plumbing
        self.store = QuorumStore(rid, config)
        self.fetcher = FetchManager(
            rid, ctx, config, fetch_rng if fetch_rng is not None else Random(rid))

        # local knowledge of blocks and delivery progress
        self.known_blocks: set[bytes] = {registry.genesis.digest}
        self._chain_known: dict[bytes, bool] = {registry.genesis.digest: True}
        self.frontier_index = 0
        self.frontier_prefix = 0
        self.frontier_digest = registry.genesis.digest
        self.delivered_keys: set[tuple[int, int]] = set()
        self.pending_commits: list[list] = []   # [qc, missing-key set], rank order
        self._pending_two_chain: Optional[QuorumCertificate] = None
        self._pending_proposal = None
        self._fetched_rank = Rank(0, 0)
        self._watch_missing: Optional[set] = None  # unmet digests of current proposal

        self._dispatch = {
            MBatch: self._on_batch,
            MPoAVote: self._on_poa_vote,
            MPoA: self._on_poa,
            MFetchRequest: self._on_fetch_request,
            MFetchResponse: self._on_fetch_response,
            MPropose: self._on_propose,
            MAdvanceRound: self._on_advance_round,
            MQCVote: self._on_qc_vote,
            MCCVote: self._on_cc_vote,
            MTCVote: self._on_tc_vote,
        }

    # ------------------------------------------------------------------
    # entry points
    # ------------------------------------------------------------------

    def on_start(self) -> None:
        if self.config.batch_interval > 0:
            phase = self.config.batch_interval * self.rid / self.config.n
            self.ctx.set_timer(phase + self.config.batch_interval, ("batch_tick",))
        self.try_advance_round(1, FullQCReason(self.genesis_qc))

    def on_message(self, sender: int, msg) -> None:
        handler = self._dispatch.get(type(msg))
        if handler is not None:
            handler(sender, msg)

    def on_timer(self, payload: tuple) -> None:
        kind = payload[0]
        if kind == "qc_vote":
            if payload[1] == self._qc_vote_gen:
                self.qc_vote()
        elif kind == "round_timeout":
            if payload[1] == self._round_timer_gen:
                self._on_round_timeout()
        elif kind == "fetch":
            self.fetcher.on_timer(payload[1], payload[2], payload[3])
        elif kind == "batch_tick":
            self._on_batch_tick()

    def on_submit(self, tx) -> None:
        self.store.mempool.append(tx)
        if self.config.batch_interval == 0:
            self._create_batch()

    # ------------------------------------------------------------------
    # batch dissemination
    # ------------------------------------------------------------------

    def _on_batch_tick(self) -> None:
        self._create_batch()
        self.ctx.set_timer(self.config.batch_interval, ("batch_tick",))

    def _create_batch(self) -> None:
        txs = self.store.take_batch_txs()
        if not txs:
            return  # empty batches are never broadcast
        batch = make_batch(self.rid, self.store.allocate_sn(), txs, self.ctx.time)
        self.store.my_batches[batch.info.sn] = batch
        self.ctx.note_broadcast(batch)
        self._multicast_batch(batch)

    def _multicast_batch(self, batch) -> None:
        self.ctx.multicast(MBatch(batch))

    def _on_batch(self, sender: int, msg: MBatch) -> None:
        batch = msg.batch
        info = batch.info
        if info.author != sender or info.digest != batch_digest(
                info.author, info.sn, batch.txs):
            self.store.strike(sender)
            return
        key = (info.author, info.sn)
        prior = self.store.seen_sn.get(key)
        if prior is not None and prior != info.digest:
            # Two digests for one (sn, author): flag and ignore the author.
            self.store.equivocators.add(info.author)
            return
        self.store.seen_sn[key] = info.digest
        if self.store.add_content(batch, proposable=True):
            self._content_added(info.digest)
        if info.digest not in self.store.voted:
            self.store.voted.add(info.digest)
            partial = self.scheme.psign(
                self.rid, 0, poa_vote_msg(info.digest, info.sn, info.author))
            self._emit_poa_vote(info.author, MPoAVote(info.sn, partial))

    def _emit_poa_vote(self, author: int, msg: MPoAVote) -> None:
        self.ctx.send(author, msg)

    def _on_poa_vote(self, sender: int, msg: MPoAVote) -> None:
        batch = self.store.my_batches.get(msg.sn)
        if batch is None or msg.partial.signer != sender:
            self.store.strike(sender)
            return
        if not self.scheme.pver(sender, 0, poa_vote_msg(
                batch.info.digest, msg.sn, self.rid), msg.partial):
            self.store.strike(sender)
            return
        votes = self.store.poa_votes.setdefault(msg.sn, {})
        if sender in votes:
            return
        votes[sender] = msg.partial
        if len(votes) == self.config.quorum_size:
            aggregate = self.scheme.combine(sorted(votes.items()))
            poa = ProofOfAvailability(
                batch.info.digest, msg.sn, self.rid, tuple(sorted(votes)), aggregate)
            poa._verified = True
            self.ctx.note_poa(poa)
            self.ctx.multicast(MPoA(poa))

    def _on_poa(self, sender: int, msg: MPoA) -> None:
        poa = msg.poa
        if not self._verify_poa(poa):
            self.store.strike(sender)
            return
        if self.store.add_poa(poa):
            self.fetcher.want(FETCH_BATCH, poa.batch_hash, list(poa.votes))

    # ------------------------------------------------------------------
    # fetch plumbing
    # ------------------------------------------------------------------

    def _on_fetch_request(self, sender: int, msg: MFetchRequest) -> None:
        if msg.kind == FETCH_BATCH:
            batch = self.store.batches.get(msg.key)
            if batch is not None:
                self.ctx.send(sender, MFetchResponse(FETCH_BATCH, msg.key, batch))
        elif msg.kind == FETCH_BLOCK:
            if msg.key in self.known_blocks:
                block = self.registry.get(msg.key)
                if block is not None:
                    self.ctx.send(sender, MFetchResponse(FETCH_BLOCK, msg.key, block))

    def _on_fetch_response(self, sender: int, msg: MFetchResponse) -> None:
        if msg.kind == FETCH_BATCH:
            batch = msg.item
            info = batch.info
            if info.digest != msg.key or info.digest != batch_digest(
                    info.author, info.sn, batch.txs):
                self.store.strike(sender)
                return
            self.fetcher.satisfied(FETCH_BATCH, info.digest)
            if self.store.add_content(batch, proposable=True):
                self._content_added(info.digest)
        elif msg.kind == FETCH_BLOCK:
            block = msg.item
            if block.digest != msg.key or not self._verify_block(block):
                self.store.strike(sender)
                return
            self.fetcher.satisfied(FETCH_BLOCK, block.digest)
            self._add_block(block)

    # ------------------------------------------------------------------
    # round advancement and proposing
    # ------------------------------------------------------------------

    def try_advance_round(self, round_no: int, reason) -> None:
        if reason.round != round_no or round_no <= self.r_cur:
            return
        self.r_cur = round_no
        self.entry_reason = reason
        self._gc_vote_maps()
        self._qc_vote_gen += 1            # stop the QC-vote timer
        self._watch_missing = None
        self._round_timer_gen += 1        # reset the round timeout
        self.ctx.set_timer(self.config.round_timeout, ("round_timeout", self._round_timer_gen))
        self.ctx.note_round_entered(round_no)
        self.on_round_entered(round_no)
        if self.config.leader_of(round_no) == self.rid:
            self._pending_proposal = reason
            self._try_propose()
        else:
            self.ctx.send(self.config.leader_of(round_no), MAdvanceRound(reason))

    def on_round_entered(self, round_no: int) -> None:
        """Adversary hook; honest replicas do nothing extra."""

    def _try_propose(self) -> None:
        reason = self._pending_proposal
        if reason is None or reason.round != self.r_cur:
            self._pending_proposal = None
            return
        parent = self.registry.get(reason.qc.block_hash)
        if parent is None or not self._is_chain_known(parent):
            # Cannot compute the payload exclusions yet; fetch and retry.
            self._ensure_chain_data(reason.qc)
            return
        self._pending_proposal = None
        self._do_propose(reason)

    def _do_propose(self, reason) -> None:
        payload = self.store.build_payload(
            self._chain_exclusions(reason.qc), self.ctx.time,
            self.policy.poas_only(self))
        block = Block(self.r_cur, reason, payload)
        block._verified = True
        self._add_block(block)
        self.ctx.note_proposed(block)
        self.ctx.multicast(MPropose(block))

    def _chain_exclusions(self, parent_qc: QuorumCertificate) -> set:
        """Digests already covered by the parent chain beyond the delivered part."""
        excl: set = set()
        try:
            chain = self.registry.chain_of(parent_qc)
        except Exception:
            return excl
        for block, prefix in reversed(chain):
            if block.digest == self.frontier_digest:
                for group in block.payload.sub_blocks[self.frontier_prefix:prefix]:
                    excl.update(info.digest for info in group)
                break
            excl.update(p.batch_hash for p in block.payload.poas)
            for group in block.payload.sub_blocks[:prefix]:
                excl.update(info.digest for info in group)
        return excl

    def _on_advance_round(self, sender: int, msg: MAdvanceRound) -> None:
        if not self._verify_reason(msg.reason):
            self.store.strike(sender)
            return
        self.on_new_qc(msg.reason.qc)
        self.try_advance_round(msg.reason.round, msg.reason)

    def _on_propose(self, sender: int, msg: MPropose) -> None:
        block = msg.block
        if not self._verify_block(block):
            self.store.strike(sender)
            return
        self._add_block(block)
        self.on_new_qc(block.reason.qc)
        r = block.round
        if (sender == self.config.leader_of(r) and r >= self.r_cur
                and r > self.r_timeout and r not in self.proposal
                and block.reason.round == r and self.policy.block_valid(block)):
            self.proposal[r] = block
            self.try_advance_round(r, block.reason)
            if self.policy.uses_qc_vote_timer:
                self._qc_vote_gen += 1
                self.ctx.set_timer(self.config.qc_vote_timeout,
                                   ("qc_vote", self._qc_vote_gen))
            self._refresh_watch(block)

    def _on_new_block(self, block: Block) -> None:
        """Quorum-store duties on any received block: pool its proofs, fetch data."""
        for poa in block.payload.poas:
            if self._verify_poa(poa) and self.store.add_poa(poa):
                self.fetcher.want(FETCH_BATCH, poa.batch_hash, list(poa.votes))
        leader = self.config.leader_of(block.round) if block.round > 0 else 0
        for info in block.payload.optimistic_infos():
            if info.digest not in self.store.batches:
                self.fetcher.want(FETCH_BATCH, info.digest, [info.author, leader])

    def _refresh_watch(self, block: Block) -> None:
        """Track which referenced batches still block a full-prefix vote."""
        missing = {info.digest for info in block.payload.optimistic_infos()
                   if info.digest not in self.store.batches}
        self._watch_missing = missing
        if not missing:
            self.qc_vote()

    # ------------------------------------------------------------------
    # QC votes and QC formation
    # ------------------------------------------------------------------

    def qc_vote(self) -> None:
        block = self.proposal.get(self.r_cur)
        if block is None:
            return
        prefix = self.store.available_prefix(block)
        if not self.policy.may_vote(prefix, self.config.sub_blocks):
            return
        vote_rank = Rank(self.r_cur, prefix)
        if self.r_cur > self.r_timeout and self.last_qc_vote < vote_rank:
            self.last_qc_vote = vote_rank
            partial = self.scheme.psign(
                self.rid, prefix, qc_vote_msg(block.digest, self.r_cur, prefix))
            self._emit_qc_vote(MQCVote(self.r_cur, prefix, block.digest, partial))

    def _emit_qc_vote(self, msg: MQCVote) -> None:
        self.ctx.multicast(msg)

    def _on_qc_vote(self, sender: int, msg: MQCVote) -> None:
        if msg.partial.signer != sender or not self.scheme.pver(
                sender, msg.prefix,
                qc_vote_msg(msg.block_hash, msg.round, msg.prefix), msg.partial):
            self.store.strike(sender)
            return
        if msg.round < self.r_cur:
            return
        votes = self.qc_votes.setdefault(msg.round, {}).setdefault(msg.block_hash, {})
        prior = votes.get(sender)
        if prior is not None and prior[0] >= msg.prefix:
            return
        votes[sender] = (msg.prefix, msg.partial)
        if len(votes) < self.config.quorum_size:
            return
        full_votes = sum(1 for p, _ in votes.values()
                         if p == self.config.sub_blocks)
        first_qc = self.qc_high.round < msg.round
        full_qc = (full_votes >= self.config.availability
                   and self.qc_high.rank < Rank(msg.round, self.config.sub_blocks))
        if not (first_qc or full_qc):
            return
        vote_prefixes = tuple(sorted((q, p) for q, (p, _) in votes.items()))
        aggregate = self.scheme.combine(
            sorted((q, sig) for q, (_, sig) in votes.items()))
        qc = QuorumCertificate(msg.round, msg.block_hash, vote_prefixes,
                               aggregate, self.config.availability)
        qc._verified = True
        self.ctx.on_valid_qc(qc)
        self.on_new_qc(qc)

    # ------------------------------------------------------------------
    # new-QC processing, CC votes, commits
    # ------------------------------------------------------------------

    def on_new_qc(self, qc: QuorumCertificate) -> None:
        if qc.rank > self.qc_high.rank:
            self.qc_high = qc
        if (not self.cc_voted.get(qc.round) and qc.round > self.r_timeout
                and qc.round >= self.r_cur - VOTE_MAP_KEEP_ROUNDS):
            self.cc_voted[qc.round] = True
            partial = self.scheme.psign(
                self.rid, qc.prefix,
                cc_vote_msg(qc.block_hash, qc.round, qc.prefix))
            self._emit_cc_vote(MCCVote(qc, partial))
        if qc.is_full(self.config.sub_blocks):
            self.try_advance_round(qc.round + 1, FullQCReason(qc))
        self._ensure_chain_data(qc)
        if self.config.two_chain_commit and not qc.is_genesis:
            self._two_chain_check(qc)

    def _emit_cc_vote(self, msg: MCCVote) -> None:
        self.ctx.multicast(msg)

    def _two_chain_check(self, qc: QuorumCertificate) -> None:
        pending = self._pending_two_chain
        if pending is not None and pending.rank >= qc.rank:
            qc = pending
        if qc.rank <= self.qc_committed.rank:
            self._pending_two_chain = None
            return
        block = self.registry.get(qc.block_hash)
        if block is None or not self._is_chain_known(block):
            self._pending_two_chain = qc
            return
        self._pending_two_chain = None
        # Scan down from the tip for the highest adjacent-round parent link.
        chain = self.registry.chain_of(qc)
        for i in range(len(chain) - 1, 0, -1):
            child = chain[i].block
            parent_qc = child.reason.qc
            if parent_qc.rank <= self.qc_committed.rank:
                break
            if child.round == parent_qc.round + 1:
                self.commit_qc(parent_qc)
                break

    def _on_cc_vote(self, sender: int, msg: MCCVote) -> None:
        qc = msg.qc
        if not self._verify_qc(qc):
            self.store.strike(sender)
            return
        if msg.partial.signer != sender or not self.scheme.pver(
                sender, qc.prefix,
                cc_vote_msg(qc.block_hash, qc.round, qc.prefix), msg.partial):
            self.store.strike(sender)
            return
        self.on_new_qc(qc)
        r = qc.round
        if r < self.r_cur - VOTE_MAP_KEEP_ROUNDS:
            return
        votes = self.cc_votes.setdefault(r, {})
        votes[sender] = (qc, msg.partial)
        if len(votes) < self.config.quorum_size:
            return
        ranked = sorted(votes.items(),
                        key=lambda item: (item[1][0].sort_key(), -item[0]),
                        reverse=True)
        selected = sorted(ranked[: self.config.quorum_size], key=lambda it: it[0])
        qcs = [v[0] for _, v in selected]
        qc_min = min(qcs, key=lambda c: c.sort_key())
        qc_max = max(qcs, key=lambda c: c.sort_key())
        if qc_min.rank <= self.qc_committed.rank:
            return
        vote_prefixes = tuple((q, v[0].prefix) for q, v in selected)
        aggregate = self.scheme.combine([(q, v[1]) for q, v in selected])
        cc = CommitCertificate(r, qc_max.block_hash, vote_prefixes, aggregate)
        cc._verified = True
        self.commit_qc(qc_min)
        self.try_advance_round(r + 1, CCReason(cc, qc_max))

    def commit_qc(self, qc: QuorumCertificate) -> None:
        if qc.rank <= self.qc_committed.rank:
            return
        self.qc_committed = qc
        self.ctx.on_direct_commit(qc)
        missing = self._missing_for(qc)
        if missing:
            self.pending_commits.append([qc, missing])
        else:
            self._deliver_up_to(qc)

    # ------------------------------------------------------------------
    # timeouts
    # ------------------------------------------------------------------

    def _on_round_timeout(self) -> None:
        self.r_timeout = self.r_cur
        partial = self.scheme.psign(
            self.rid, 0,
            tc_vote_msg(self.r_cur, self.qc_high.round, self.qc_high.prefix))
        self._emit_tc_vote(
            MTCVote(self.r_cur, self.entry_reason, self.qc_high, partial))

    def _emit_tc_vote(self, msg: MTCVote) -> None:
        self.ctx.multicast(msg)

    def _on_tc_vote(self, sender: int, msg: MTCVote) -> None:
        if (msg.reason is None or not self._verify_reason(msg.reason)
                or not self._verify_qc(msg.qc_high)):
            self.store.strike(sender)
            return
        if msg.partial.signer != sender or not self.scheme.pver(
                sender, 0,
                tc_vote_msg(msg.round, msg.qc_high.round, msg.qc_high.prefix),
                msg.partial):
            self.store.strike(sender)
            return
        if msg.reason.round != msg.round:
            self.store.strike(sender)
            return
        self.on_new_qc(msg.qc_high)
        self.try_advance_round(msg.round, msg.reason)  # lagging-replica catch-up
        if msg.round < self.r_cur - VOTE_MAP_KEEP_ROUNDS:
            return
        votes = self.tc_votes.setdefault(msg.round, {})
        if sender not in votes:
            votes[sender] = (msg.qc_high, msg.partial)
        if len(votes) != self.config.quorum_size:
            return
        items = sorted(votes.items())
        vote_data = tuple((q, v[0].rank) for q, v in items)
        qc_max = max((v[0] for _, v in items), key=lambda c: c.sort_key())
        aggregate = self.scheme.combine([(q, v[1]) for q, v in items])
        tc = TimeoutCertificate(msg.round, vote_data, aggregate)
        tc._verified = True
        self.try_advance_round(msg.round + 1, TCReason(tc, qc_max))

    # ------------------------------------------------------------------
    # chain data tracking and delivery
    # ------------------------------------------------------------------

    def _add_block(self, block: Block) -> None:
        self.registry.add(block)
        if block.digest in self.known_blocks:
            return
        self.known_blocks.add(block.digest)
        self.fetcher.satisfied(FETCH_BLOCK, block.digest)
        self._on_new_block(block)
        parent_qc = block.reason.qc if block.reason is not None else None
        if parent_qc is not None and parent_qc.block_hash not in self.known_blocks:
            self.fetcher.want(
                FETCH_BLOCK, parent_qc.block_hash,
                [q for q, _ in parent_qc.vote_prefixes] +
                ([self.config.leader_of(parent_qc.round)] if parent_qc.round > 0 else []))
        if self._pending_proposal is not None:
            self._try_propose()
        if self._pending_two_chain is not None:
            self._two_chain_check(self._pending_two_chain)
        if self.pending_commits:
            key = ("blk", block.digest)
            for entry in self.pending_commits:
                if key in entry[1]:
                    entry[1].discard(key)
                    self._fetch_block_contents(block, entry[0])
            self._drain_pending_commits()

    def _content_added(self, digest: bytes) -> None:
        self.fetcher.satisfied(FETCH_BATCH, digest)
        watch = self._watch_missing
        if watch is not None and digest in watch:
            watch.discard(digest)
            if not watch:
                self.qc_vote()  # full prefix now available
        if self.pending_commits:
            key = ("bat", digest)
            hit = False
            for entry in self.pending_commits:
                if key in entry[1]:
                    entry[1].discard(key)
                    hit = True
            if hit:
                self._drain_pending_commits()

    def _is_chain_known(self, block: Block) -> bool:
        memo = self._chain_known
        flag = memo.get(block.digest)
        if flag is not None:
            return flag
        walk = []
        cur = block
        known = True
        while cur.digest not in memo:
            if cur.digest not in self.known_blocks:
                known = False
                break
            walk.append(cur.digest)
            parent = self.registry.get(cur.reason.qc.block_hash)
            if parent is None:
                known = False
                break
            cur = parent
        if known:
            known = memo.get(cur.digest, True)
        if known:
            for d in walk:
                memo[d] = True
        return known

    def _ensure_chain_data(self, qc: QuorumCertificate) -> None:
        """Arrange fetches for everything in qc's chain that is missing locally."""
        if qc.rank <= self._fetched_rank:
            return
        self._fetched_rank = qc.rank
        block = self.registry.get(qc.block_hash)
        if block is None:
            voters = [q for q, _ in qc.vote_prefixes]
            self.fetcher.want(FETCH_BLOCK, qc.block_hash,
                              voters + [self.config.leader_of(qc.round)])
            return
        try:
            chain = self.registry.chain_of(qc)
        except Exception:
            return
        for element in reversed(chain):
            blk = element.block
            if blk.digest == self.frontier_digest:
                break
            if blk.digest not in self.known_blocks:
                self.fetcher.want(
                    FETCH_BLOCK, blk.digest,
                    [self.config.leader_of(blk.round)] if blk.round > 0 else [])
            else:
                self._fetch_block_contents_prefix(blk, element.prefix)

    def _fetch_block_contents_prefix(self, block: Block, prefix: int) -> None:
        held = self.store.batches
        leader = self.config.leader_of(block.round) if block.round > 0 else 0
        for poa in block.payload.poas:
            if poa.batch_hash not in held:
                self.fetcher.want(FETCH_BATCH, poa.batch_hash, list(poa.votes))
        for group in block.payload.sub_blocks[:prefix]:
            for info in group:
                if info.digest not in held:
                    self.fetcher.want(FETCH_BATCH, info.digest,
                                      [info.author, leader])

    def _fetch_block_contents(self, block: Block, target_qc) -> None:
        chain = self.registry.chain_of(target_qc)
        for element in chain:
            if element.block.digest == block.digest:
                self._fetch_block_contents_prefix(block, element.prefix)
                return

    def _missing_for(self, qc: QuorumCertificate) -> set:
        """Keys for chain data this replica still lacks before delivering qc."""
        missing: set = set()
        chain = self.registry.chain_of(qc)
        start = self._frontier_position(chain)
        held = self.store.batches
        for i in range(start, len(chain)):
            block, prefix = chain[i]
            if block.digest not in self.known_blocks:
                missing.add(("blk", block.digest))
                self.fetcher.want(
                    FETCH_BLOCK, block.digest,
                    [q for q, _ in qc.vote_prefixes] +
                    ([self.config.leader_of(block.round)] if block.round > 0 else []))
            for poa in block.payload.poas:
                if poa.batch_hash not in held:
                    missing.add(("bat", poa.batch_hash))
            for group in block.payload.sub_blocks[:prefix]:
                for info in group:
                    if info.digest not in held:
                        missing.add(("bat", info.digest))
            if block.digest in self.known_blocks:
                self._fetch_block_contents_prefix(block, prefix)
        return missing

    def _frontier_position(self, chain) -> int:
        idx = self.frontier_index
        if idx < len(chain) and chain[idx].block.digest == self.frontier_digest:
            return idx
        for i, element in enumerate(chain):  # defensive: relocate by digest
            if element.block.digest == self.frontier_digest:
                self.frontier_index = i
                return i
        return 0

    def _drain_pending_commits(self) -> None:
        while self.pending_commits and not self.pending_commits[0][1]:
            qc = self.pending_commits.pop(0)[0]
            self._deliver_up_to(qc)

    def _deliver_up_to(self, qc: QuorumCertificate) -> None:
        chain = self.registry.chain_of(qc)
        start = self._frontier_position(chain)
        for i in range(start, len(chain)):
            block, prefix = chain[i]
            from_prefix = self.frontier_prefix if i == start else None
            self._deliver_block_range(block, from_prefix, prefix)
        last = chain[-1]
        self.frontier_index = len(chain) - 1
        self.frontier_prefix = last.prefix
        self.frontier_digest = last.block.digest

    def _deliver_block_range(self, block: Block, from_prefix, to_prefix: int) -> None:
        refs: list[BatchRef] = []
        if from_prefix is None:
            refs.extend(BatchRef(p.batch_hash, p.sn, p.author)
                        for p in sorted(block.payload.poas,
                                        key=lambda p: (p.author, p.sn)))
            from_prefix = 0
        for group in block.payload.sub_blocks[from_prefix:to_prefix]:
            refs.extend(BatchRef(i.digest, i.sn, i.author) for i in group)
        for ref in refs:
            self.store.mark_delivered(ref.digest)
            key = (ref.author, ref.sn)
            if key in self.delivered_keys:
                continue  # non-duplication guard
            self.delivered_keys.add(key)
            self.ctx.deliver(ref, block.round)

    # ------------------------------------------------------------------
    # verification (implicit on receipt)
    # ------------------------------------------------------------------

    def _verify_qc(self, qc: QuorumCertificate) -> bool:
        if qc._verified:
            return True
        if len(qc.vote_prefixes) < self.config.quorum_size:
            return False
        try:
            if qc.prefix != qc_certified_prefix(qc.vote_prefixes,
                                                self.config.availability):
                return False
        except MalformedCertificate:
            return False
        claims = [(q, p, qc_vote_msg(qc.block_hash, qc.round, p))
                  for q, p in qc.vote_prefixes]
        if not self.scheme.verify_agg(claims, qc.signature):
            return False
        qc._verified = True
        self.ctx.on_valid_qc(qc)
        return True

    def _verify_cc(self, cc: CommitCertificate) -> bool:
        if cc._verified:
            return True
        if len(cc.vote_prefixes) != self.config.quorum_size:
            return False
        claims = [(q, p, cc_vote_msg(cc.block_hash, cc.round, p))
                  for q, p in cc.vote_prefixes]
        if not self.scheme.verify_agg(claims, cc.signature):
            return False
        cc._verified = True
        return True

    def _verify_tc(self, tc: TimeoutCertificate) -> bool:
        if tc._verified:
            return True
        if len(tc.vote_data) < self.config.quorum_size:
            return False
        claims = [(q, 0, tc_vote_msg(tc.round, rank.round, rank.prefix))
                  for q, rank in tc.vote_data]
        if not self.scheme.verify_agg(claims, tc.signature):
            return False
        tc._verified = True
        return True

    def _verify_poa(self, poa: ProofOfAvailability) -> bool:
        if poa._verified:
            return True
        if len(poa.votes) < self.config.quorum_size:
            return False
        msg = poa_vote_msg(poa.batch_hash, poa.sn, poa.author)
        claims = [(q, 0, msg) for q in poa.votes]
        if not self.scheme.verify_agg(claims, poa.signature):
            return False
        poa._verified = True
        return True

    def _verify_reason(self, reason) -> bool:
        if isinstance(reason, FullQCReason):
            certs_ok = self._verify_qc(reason.qc)
        elif isinstance(reason, CCReason):
            certs_ok = self._verify_cc(reason.cc) and self._verify_qc(reason.qc)
        elif isinstance(reason, TCReason):
            certs_ok = self._verify_tc(reason.tc) and self._verify_qc(reason.qc)
        else:
            return False
        return certs_ok and verify_entry_reason(reason, self.config.sub_blocks)

    def _verify_block(self, block: Block) -> bool:
        if getattr(block, "_verified", False):
            return True
        if block.reason is None:
            return False  # only genesis lacks a reason, and it is never proposed
        if len(block.payload.sub_blocks) != self.config.sub_blocks:
            return False
        if block.reason.round != block.round:
            return False
        if not self._verify_reason(block.reason):
            return False
        if block.reason.qc.round >= block.round:
            return False
        block._verified = True
        return True

    # ------------------------------------------------------------------
    # maintenance
    # ------------------------------------------------------------------

    def _gc_vote_maps(self) -> None:
        floor = self.r_cur - VOTE_MAP_KEEP_ROUNDS
        for mapping in (self.qc_votes, self.cc_votes, self.tc_votes,
                        self.proposal, self.cc_voted):
            if len(mapping) > VOTE_MAP_KEEP_ROUNDS + 2:
                for r in [r for r in mapping if r < floor]:
                    del mapping[r]

    def gc_batches(self, digests) -> None:
        """Drop batch contents that are durably committed everywhere."""
        for digest in digests:
            self.store.batches.pop(digest, None)
