"""Protocol data structures and the rank / chain / prefix algebra.

Blocks carry a payload of availability proofs plus optimistically proposed
batch digests grouped into `M` sub-blocks.  Certificates (quorum, commit,
timeout) aggregate per-replica votes and expose the derived quantities the
protocol ranks and commits by.  Ranks `(round, prefix)` compare
lexicographically.
"""

from __future__ import annotations

import hashlib as _hashlib
from struct import pack as _spack
from typing import Iterable, NamedTuple, Optional

from .serialization import digest as _digest
from .serialization import pack


class DataUnavailable(Exception):
    """A referenced block or batch is not locally resolvable."""

    def __init__(self, missing):
        super().__init__(f"missing data: {missing!r}")
        self.missing = missing


class MalformedCertificate(ValueError):
    """A certificate or payload violates a structural constraint."""


class Rank(NamedTuple):
    """Lexicographically ordered (round, prefix) pair."""

    round: int
    prefix: int


GENESIS_RANK = Rank(0, 0)


class BatchInfo(NamedTuple):
    """Metadata identifying one disseminated batch."""

    digest: bytes
    sn: int
    author: int
    created_at: float


class BatchRef(NamedTuple):
    """Delivery identity of a batch message: what aDeliver streams consist of."""

    digest: bytes
    sn: int
    author: int


class Batch(NamedTuple):
    """A batch with its transaction payload, as carried on the wire."""

    info: BatchInfo
    txs: tuple


def batch_digest(author: int, sn: int, txs: tuple) -> bytes:
    h = _hashlib.blake2b(_spack(">qq", author, sn), digest_size=32)
    for tx in txs:
        h.update(_spack(">qqq", tx[0], tx[1], tx[2]))
    return h.digest()


def make_batch(author: int, sn: int, txs: Iterable[tuple], created_at: float) -> Batch:
    txs = tuple(txs)
    info = BatchInfo(batch_digest(author, sn, txs), sn, author, created_at)
    return Batch(info, txs)


class ProofOfAvailability:
    """Aggregate attestation that a quorum stores a batch."""

    __slots__ = ("batch_hash", "sn", "author", "votes", "signature", "_verified")

    def __init__(self, batch_hash: bytes, sn: int, author: int,
                 votes: tuple[int, ...], signature: bytes):
        if len(set(votes)) != len(votes):
            raise MalformedCertificate("duplicate voter in availability proof")
        self.batch_hash = batch_hash
        self.sn = sn
        self.author = author
        self.votes = tuple(sorted(votes))
        self.signature = signature
        self._verified = False

    def encode(self) -> bytes:
        return pack("poa", self.batch_hash, self.sn, self.author,
                    list(self.votes), self.signature)

    def __repr__(self):
        return f"PoA(author={self.author}, sn={self.sn}, votes={self.votes})"


class BlockPayload:
    """Availability proofs plus M sub-blocks of optimistic batch digests."""

    __slots__ = ("poas", "sub_blocks")

    def __init__(self, poas: Iterable[ProofOfAvailability],
                 sub_blocks: Iterable[Iterable[BatchInfo]]):
        self.poas = tuple(poas)
        self.sub_blocks = tuple(tuple(group) for group in sub_blocks)
        seen = set()
        for poa in self.poas:
            if poa.batch_hash in seen:
                raise MalformedCertificate("duplicate batch among availability proofs")
            seen.add(poa.batch_hash)
        for group in self.sub_blocks:
            for info in group:
                if info.digest in seen:
                    raise MalformedCertificate("batch repeated inside block payload")
                seen.add(info.digest)

    @property
    def optimistic_count(self) -> int:
        return sum(len(g) for g in self.sub_blocks)

    def optimistic_infos(self):
        for group in self.sub_blocks:
            yield from group

    def encode(self) -> bytes:
        return pack(
            "payload",
            [poa.encode() for poa in self.poas],
            [[pack("bi", i.digest, i.sn, i.author, i.created_at) for i in group]
             for group in self.sub_blocks],
        )


def empty_payload(sub_blocks: int) -> BlockPayload:
    return BlockPayload((), [() for _ in range(sub_blocks)])


def qc_certified_prefix(vote_prefixes, availability: int) -> int:
    """S'th largest voted prefix, duplicates counted.

    Disregarding the S-1 largest votes guarantees at least S voters hold
    every batch in the certified prefix, hence at least S-f honest holders.
    """
    prefixes = sorted((p for _, p in vote_prefixes), reverse=True)
    if len(prefixes) < availability:
        raise MalformedCertificate(
            f"{len(prefixes)} votes cannot certify with availability requirement "
            f"{availability}"
        )
    return prefixes[availability - 1]


def _check_vote_records(records) -> tuple:
    records = tuple(sorted(records))
    voters = [r for r, _ in records]
    if len(set(voters)) != len(voters):
        raise MalformedCertificate("duplicate voter in certificate")
    return records


class QuorumCertificate:
    """Aggregated QC-votes on one block, certifying a prefix of it."""

    __slots__ = ("round", "block_hash", "vote_prefixes", "signature",
                 "prefix", "rank", "is_genesis", "_verified")

    def __init__(self, round_no: int, block_hash: bytes, vote_prefixes,
                 signature, availability: int, *, genesis: bool = False):
        self.round = round_no
        self.block_hash = block_hash
        self.vote_prefixes = _check_vote_records(vote_prefixes)
        self.signature = signature
        self.is_genesis = genesis
        if genesis:
            self.prefix = 0
        else:
            self.prefix = qc_certified_prefix(self.vote_prefixes, availability)
        self.rank = Rank(round_no, self.prefix)
        self._verified = genesis

    def is_full(self, sub_blocks: int) -> bool:
        return self.is_genesis or self.prefix == sub_blocks

    def sort_key(self):
        return (self.rank, self.block_hash, self.vote_prefixes)

    def encode(self) -> bytes:
        return pack("qc", self.round, self.block_hash,
                    [list(v) for v in self.vote_prefixes],
                    self.signature, 1 if self.is_genesis else 0)

    def __repr__(self):
        return f"QC(round={self.round}, prefix={self.prefix})"


class CommitCertificate:
    """Aggregated CC-votes; commits the minimum and extends the maximum prefix."""

    __slots__ = ("round", "block_hash", "vote_prefixes", "signature",
                 "commit_prefix", "extend_prefix", "_verified")

    def __init__(self, round_no: int, block_hash: bytes, vote_prefixes, signature):
        self.round = round_no
        self.block_hash = block_hash
        self.vote_prefixes = _check_vote_records(vote_prefixes)
        self.signature = signature
        prefixes = [p for _, p in self.vote_prefixes]
        self.commit_prefix = min(prefixes)
        self.extend_prefix = max(prefixes)
        self._verified = False

    def encode(self) -> bytes:
        return pack("cc", self.round, self.block_hash,
                    [list(v) for v in self.vote_prefixes], self.signature)

    def __repr__(self):
        return (f"CC(round={self.round}, commit={self.commit_prefix}, "
                f"extend={self.extend_prefix})")


class TimeoutCertificate:
    """Aggregated TC-votes carrying each voter's highest QC rank."""

    __slots__ = ("round", "vote_data", "signature", "extend_rank", "_verified")

    def __init__(self, round_no: int, vote_data, signature):
        self.round = round_no
        self.vote_data = _check_vote_records(
            (replica, Rank(*rank)) for replica, rank in vote_data
        )
        if not self.vote_data:
            raise MalformedCertificate("empty timeout certificate")
        self.signature = signature
        self.extend_rank = max(rank for _, rank in self.vote_data)
        self._verified = False

    def encode(self) -> bytes:
        return pack("tc", self.round,
                    [[r, rank.round, rank.prefix] for r, rank in self.vote_data],
                    self.signature)

    def __repr__(self):
        return f"TC(round={self.round}, extend_rank={tuple(self.extend_rank)})"


# --- Entry reasons ------------------------------------------------------

class FullQCReason:
    """Round entry justified by a full-prefix QC of the previous round."""

    __slots__ = ("qc",)
    kind = "full_qc"

    def __init__(self, qc: QuorumCertificate):
        self.qc = qc

    @property
    def round(self) -> int:
        return self.qc.round + 1

    def encode(self) -> bytes:
        return pack(self.kind, self.qc.encode())

    def __repr__(self):
        return f"FullQCReason(round={self.round})"


class CCReason:
    """Round entry justified by a commit certificate plus a QC extending it."""

    __slots__ = ("cc", "qc")
    kind = "cc"

    def __init__(self, cc: CommitCertificate, qc: QuorumCertificate):
        self.cc = cc
        self.qc = qc

    @property
    def round(self) -> int:
        return self.qc.round + 1

    def encode(self) -> bytes:
        return pack(self.kind, self.cc.encode(), self.qc.encode())

    def __repr__(self):
        return f"CCReason(round={self.round})"


class TCReason:
    """Round entry justified by a timeout certificate plus a covering QC."""

    __slots__ = ("tc", "qc")
    kind = "tc"

    def __init__(self, tc: TimeoutCertificate, qc: QuorumCertificate):
        self.tc = tc
        self.qc = qc

    @property
    def round(self) -> int:
        return self.tc.round + 1

    def encode(self) -> bytes:
        return pack(self.kind, self.tc.encode(), self.qc.encode())

    def __repr__(self):
        return f"TCReason(round={self.round})"


EntryReason = FullQCReason | CCReason | TCReason


def verify_entry_reason(reason: EntryReason, sub_blocks: int) -> bool:
    """Structural validity of an entry reason (certificates verified separately)."""
    if isinstance(reason, FullQCReason):
        return reason.qc.is_full(sub_blocks)
    if isinstance(reason, CCReason):
        return (reason.cc.round == reason.qc.round
                and reason.qc.prefix >= reason.cc.extend_prefix)
    if isinstance(reason, TCReason):
        return (reason.qc.rank >= reason.tc.extend_rank
                and reason.qc.round <= reason.tc.round)
    return False


# --- Blocks and chains --------------------------------------------------

class Block:
    """A proposal: round, the reason that justifies it, and a payload."""

    __slots__ = ("round", "reason", "payload", "digest", "_ancestors", "_verified")

    def __init__(self, round_no: int, reason: Optional[EntryReason],
                 payload: BlockPayload):
        self.round = round_no
        self.reason = reason
        self.payload = payload
        self.digest = _digest(
            "block", round_no,
            reason.encode() if reason is not None else b"genesis",
            payload.encode(),
        )
        self._ancestors = None  # cached chain of (Block, prefix) above this block
        self._verified = False

    @property
    def qc_parent(self) -> Optional[QuorumCertificate]:
        return self.reason.qc if self.reason is not None else None

    def __repr__(self):
        return f"Block(round={self.round}, digest={self.digest[:4].hex()})"


class BlockPrefix(NamedTuple):
    """One chain element: a block together with how much of it is covered."""

    block: Block
    prefix: int


def make_genesis(availability: int) -> tuple[Block, QuorumCertificate]:
    """The distinguished round-0 block and its predefined QC of rank (0, 0)."""
    block = Block(0, None, empty_payload(0))
    qc = QuorumCertificate(0, block.digest, (), b"", availability, genesis=True)
    return block, qc


class BlockRegistry:
    """Digest-indexed block resolution shared by chain walks.

    The registry models "some replica has seen this content"; per-replica
    availability is tracked separately by each replica's stores.
    """

    def __init__(self, genesis: Block):
        self.genesis = genesis
        self._blocks: dict[bytes, Block] = {genesis.digest: genesis}

    def add(self, block: Block) -> None:
        self._blocks.setdefault(block.digest, block)

    def get(self, block_hash: bytes) -> Optional[Block]:
        return self._blocks.get(block_hash)

    def block_of(self, qc: QuorumCertificate) -> Block:
        block = self._blocks.get(qc.block_hash)
        if block is None:
            raise DataUnavailable(qc.block_hash)
        return block

    def ancestors(self, block: Block) -> tuple[BlockPrefix, ...]:
        """Chain of block prefixes strictly above `block`, starting at genesis."""
        if block._ancestors is not None:
            return block._ancestors
        if block.reason is None:
            block._ancestors = ()
            return ()
        parent_qc = block.reason.qc
        parent = self._blocks.get(parent_qc.block_hash)
        if parent is None:
            raise DataUnavailable(parent_qc.block_hash)
        chain = self.ancestors(parent) + (BlockPrefix(parent, parent_qc.prefix),)
        block._ancestors = chain
        return chain

    def chain_of(self, qc: QuorumCertificate) -> tuple[BlockPrefix, ...]:
        """The sequence of block prefixes from genesis to the prefix `qc` references."""
        block = self.block_of(qc)
        return self.ancestors(block) + (BlockPrefix(block, qc.prefix),)

    def is_prefix_of(self, qc1: QuorumCertificate, qc2: QuorumCertificate) -> bool:
        """True iff qc1's chain is nested inside qc2's chain."""
        block1 = self.block_of(qc1)
        chain2 = self.chain_of(qc2)
        # Rounds strictly increase along a chain, so locate by round.
        lo, hi = 0, len(chain2) - 1
        while lo <= hi:
            mid = (lo + hi) // 2
            element = chain2[mid]
            if element.block.round < block1.round:
                lo = mid + 1
            elif element.block.round > block1.round:
                hi = mid - 1
            else:
                return element.block is block1 and qc1.prefix <= element.prefix
        return False


def block_messages(block: Block, prefix: int) -> list[BatchRef]:
    """Batches covered by `(block, prefix)`: all proofs, then sub-blocks 1..prefix.

    Proofs are ordered by (author, sn); optimistic batches keep the
    proposer's sub-block layout.  Both orders are content-derived, so every
    replica observes the same sequence.
    """
    out = [BatchRef(p.batch_hash, p.sn, p.author)
           for p in sorted(block.payload.poas, key=lambda p: (p.author, p.sn))]
    for group in block.payload.sub_blocks[:prefix]:
        out.extend(BatchRef(i.digest, i.sn, i.author) for i in group)
    return out


def messages_of(chain: Iterable[BlockPrefix]) -> tuple[BatchRef, ...]:
    """Ordered batch sequence covered by a chain of block prefixes."""
    out = []
    for block, prefix in chain:
        out.extend(block_messages(block, prefix))
    return tuple(out)
