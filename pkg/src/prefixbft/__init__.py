"""Prefix-consensus BFT replication with a deterministic network simulator."""

from .config import ProtocolConfig, Variant
from .types import (Batch, BatchInfo, BatchRef, Block, BlockPayload, BlockPrefix,
                    BlockRegistry, CommitCertificate, ProofOfAvailability,
                    QuorumCertificate, Rank, TimeoutCertificate, make_genesis,
                    messages_of, qc_certified_prefix)

__version__ = "0.1.0"

__all__ = [
    "ProtocolConfig", "Variant", "Batch", "BatchInfo", "BatchRef", "Block",
    "BlockPayload", "BlockPrefix", "BlockRegistry", "CommitCertificate",
    "ProofOfAvailability", "QuorumCertificate", "Rank", "TimeoutCertificate",
    "make_genesis", "messages_of", "qc_certified_prefix",
]
