"""Simulated wire messages and the byte strings replicas sign.

Data-plane traffic (raw batches, fetch responses) travels on the `data`
channel, small availability-control messages on `qs-control`, and all
consensus traffic on `consensus`, mirroring the per-channel separation the
network model can delay independently.
"""

from __future__ import annotations

from struct import pack as _spack

from .types import (Batch, Block, EntryReason, ProofOfAvailability,
                    QuorumCertificate)
from .crypto import PartialSignature

CHANNEL_DATA = "data"
CHANNEL_QS = "qs-control"
CHANNEL_CONSENSUS = "consensus"

UNTAGGED = 0  # key-share tag for messages whose rank is encoded in the bytes

# Signing payloads: a fixed tag byte, the 32-byte digest where present, and
# fixed-width big-endian integers, so distinct field values never collide.


def poa_vote_msg(batch_hash: bytes, sn: int, author: int) -> bytes:
    return b"\x01" + batch_hash + _spack(">qq", sn, author)


def qc_vote_msg(block_hash: bytes, round_no: int, prefix: int) -> bytes:
    return b"\x02" + block_hash + _spack(">qq", round_no, prefix)


def cc_vote_msg(block_hash: bytes, round_no: int, prefix: int) -> bytes:
    return b"\x03" + block_hash + _spack(">qq", round_no, prefix)


def tc_vote_msg(round_no: int, qc_round: int, qc_prefix: int) -> bytes:
    return b"\x04" + _spack(">qqq", round_no, qc_round, qc_prefix)


class MBatch:
    __slots__ = ("batch",)
    channel = CHANNEL_DATA

    def __init__(self, batch: Batch):
        self.batch = batch


class MPoAVote:
    __slots__ = ("sn", "partial")
    channel = CHANNEL_QS

    def __init__(self, sn: int, partial: PartialSignature):
        self.sn = sn
        self.partial = partial


class MPoA:
    __slots__ = ("poa",)
    channel = CHANNEL_QS

    def __init__(self, poa: ProofOfAvailability):
        self.poa = poa


FETCH_BATCH = "batch"
FETCH_BLOCK = "block"


class MFetchRequest:
    __slots__ = ("kind", "key")
    channel = CHANNEL_QS

    def __init__(self, kind: str, key: bytes):
        self.kind = kind
        self.key = key


class MFetchResponse:
    __slots__ = ("kind", "key", "item")
    channel = CHANNEL_DATA

    def __init__(self, kind: str, key: bytes, item):
        self.kind = kind
        self.key = key
        self.item = item


class MPropose:
    __slots__ = ("block",)
    channel = CHANNEL_CONSENSUS

    def __init__(self, block: Block):
        self.block = block


class MAdvanceRound:
    __slots__ = ("reason",)
    channel = CHANNEL_CONSENSUS

    def __init__(self, reason: EntryReason):
        self.reason = reason


class MQCVote:
    __slots__ = ("round", "prefix", "block_hash", "partial")
    channel = CHANNEL_CONSENSUS

    def __init__(self, round_no: int, prefix: int, block_hash: bytes,
                 partial: PartialSignature):
        self.round = round_no
        self.prefix = prefix
        self.block_hash = block_hash
        self.partial = partial


class MCCVote:
    __slots__ = ("qc", "partial")
    channel = CHANNEL_CONSENSUS

    def __init__(self, qc: QuorumCertificate, partial: PartialSignature):
        self.qc = qc
        self.partial = partial


class MTCVote:
    __slots__ = ("round", "reason", "qc_high", "partial")
    channel = CHANNEL_CONSENSUS

    def __init__(self, round_no: int, reason: EntryReason,
                 qc_high: QuorumCertificate, partial: PartialSignature):
        self.round = round_no
        self.reason = reason
        self.qc_high = qc_high
        self.partial = partial
