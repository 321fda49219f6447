"""Behavioral deltas selecting between the three protocol variants.

The prefix-voting replica is the identity policy.  The all-or-nothing
variant disables timer-triggered partial votes and only votes once every
referenced batch is held locally, fetching on the critical path.  The
certified-dissemination baseline proposes availability proofs only, so
replicas can always vote immediately and every certified prefix is full.
"""

from __future__ import annotations

from .config import ProtocolConfig, Variant
from .types import Block, TCReason


class VariantPolicy:
    """Hook points a replica consults; the default is full prefix voting."""

    name = "RAPTR"
    uses_qc_vote_timer = True

    def may_vote(self, prefix: int, sub_blocks: int) -> bool:
        return True

    def poas_only(self, replica) -> bool:
        return False

    def block_valid(self, block: Block) -> bool:
        return True


class RaptrPolicy(VariantPolicy):
    pass


class BabyRaptrPolicy(VariantPolicy):
    """Vote only with the full block available; no partial votes."""

    name = "BABY_RAPTR"
    uses_qc_vote_timer = False

    def may_vote(self, prefix: int, sub_blocks: int) -> bool:
        return prefix == sub_blocks

    def poas_only(self, replica) -> bool:
        # Fallback: after a timed-out round the next leader proposes only
        # certified batches, so voting cannot stall on missing data again.
        return isinstance(replica.entry_reason, TCReason)


class BaselineQsPolicy(VariantPolicy):
    """Leaders propose availability proofs only; votes never wait for data."""

    name = "BASELINE_QS"
    uses_qc_vote_timer = False

    def poas_only(self, replica) -> bool:
        return True

    def block_valid(self, block: Block) -> bool:
        return block.payload.optimistic_count == 0


_POLICIES = {
    Variant.RAPTR: RaptrPolicy,
    Variant.BABY_RAPTR: BabyRaptrPolicy,
    Variant.BASELINE_QS: BaselineQsPolicy,
}


def variant_dispatch(config: ProtocolConfig) -> VariantPolicy:
    try:
        return _POLICIES[config.variant]()
    except KeyError:
        raise ValueError(f"unknown variant {config.variant!r}") from None
