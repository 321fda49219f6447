"""Protocol-level configuration shared by every variant."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class Variant(Enum):
    RAPTR = "RAPTR"
    BABY_RAPTR = "BABY_RAPTR"
    BASELINE_QS = "BASELINE_QS"


class ConfigError(ValueError):
    """Raised when a configuration violates a structural constraint."""


@dataclass(frozen=True)
class ProtocolConfig:
    """Static parameters of one protocol deployment.

    `n` must equal 3f+1 and the vote quorum is always 2f+1.  The
    availability requirement `availability` (how many full-prefix votes are
    needed before a prefix counts as retrievable) may range from f+1 up to
    the quorum size; lower values decouple data availability from the
    safety quorum.
    """

    n: int = 4
    f: int = 1
    availability: int = 2            # S
    sub_blocks: int = 4              # M
    delta: float = 2.0               # network bound, simulated time units
    epsilon: float = 0.1             # QC-vote timer is epsilon * delta
    min_batch_age: float = 0.0
    batch_interval: float = 0.0      # 0 = one batch per submission, immediately
    batch_capacity: int = 450
    variant: Variant = Variant.RAPTR
    two_chain_commit: bool = True
    crypto_scheme: str = "test"      # "test" or "nocommit"

    @property
    def quorum_size(self) -> int:
        return 2 * self.f + 1

    def __post_init__(self):
        if self.n != 3 * self.f + 1:
            raise ConfigError(f"n={self.n} must equal 3f+1 for f={self.f}")
        if not (self.f + 1 <= self.availability <= self.quorum_size):
            raise ConfigError(
                f"availability requirement {self.availability} outside "
                f"[f+1, 2f+1] = [{self.f + 1}, {self.quorum_size}]"
            )
        if self.sub_blocks < 1:
            raise ConfigError("sub_blocks must be >= 1")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.delta <= 0:
            raise ConfigError("delta must be positive")
        if self.min_batch_age < 0:
            raise ConfigError("min_batch_age must be >= 0")
        if self.batch_capacity < 1:
            raise ConfigError("batch_capacity must be >= 1")
        if self.crypto_scheme not in ("test", "nocommit"):
            raise ConfigError(f"unknown crypto scheme {self.crypto_scheme!r}")

    def leader_of(self, round_no: int) -> int:
        """Round-robin leader schedule."""
        return (round_no - 1) % self.n

    @property
    def qc_vote_timeout(self) -> float:
        return self.epsilon * self.delta

    @property
    def round_timeout(self) -> float:
        return (4 + self.epsilon) * self.delta
