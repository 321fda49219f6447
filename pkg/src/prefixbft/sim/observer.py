"""Online safety-invariant checking over the global simulation trace.

The observer sees every verified certificate, every direct commit, every
delivery, and every vote an honest replica sends.  Violations raise
immediately so the run aborts with the conflicting artifacts; checks are
incremental so campaigns stay cheap:

* same-round QC uniqueness - first verified QC per round pins the digest;
* prefix containment - directly committed QCs are kept rank-sorted and
  each insertion is checked against its rank neighbors (the prefix
  relation is transitive, so adjacent-pair coverage implies all pairs);
* total order / non-duplication - one canonical delivered sequence, with
  every replica's stream an indexed cursor into it.
"""

from __future__ import annotations

import hashlib

from ..types import BatchRef, BlockRegistry, QuorumCertificate, Rank


class SafetyViolation(Exception):
    def __init__(self, kind: str, detail: str, artifacts=()):
        super().__init__(f"{kind}: {detail}")
        self.kind = kind
        self.detail = detail
        self.artifacts = artifacts


class SafetyObserver:
    def __init__(self, registry: BlockRegistry, honest: frozenset[int]):
        self.registry = registry
        self.honest = honest
        self.qc_round_digest: dict[int, bytes] = {}
        self.committed: list[tuple[Rank, bytes, QuorumCertificate]] = []
        self.commit_prefixes: dict[bytes, int] = {}   # block digest -> max prefix
        self.canonical: list[BatchRef] = []
        self.cursor: dict[int, int] = {r: 0 for r in honest}
        self.delivered_sets: dict[int, set] = {r: set() for r in honest}
        self.log_digests: dict[int, object] = {
            r: hashlib.blake2b(digest_size=16) for r in honest}
        self.replica_committed: dict[int, Rank] = {r: Rank(0, 0) for r in honest}
        self.vote_counts: dict[tuple[int, int, str], int] = {}
        self.last_qc_vote: dict[int, Rank] = {}
        self.timeout_round: dict[int, int] = {}
        self.tc_rounds: set[int] = set()
        self.qc_count = 0

    # -- certificates ------------------------------------------------------

    def on_valid_qc(self, qc: QuorumCertificate) -> None:
        self.qc_count += 1
        prior = self.qc_round_digest.get(qc.round)
        if prior is None:
            self.qc_round_digest[qc.round] = qc.block_hash
        elif prior != qc.block_hash:
            raise SafetyViolation(
                "same-round-qc",
                f"round {qc.round} certified two different blocks",
                (prior.hex(), qc.block_hash.hex()))

    def on_direct_commit(self, rid: int, qc: QuorumCertificate) -> None:
        if rid in self.replica_committed:
            if qc.rank < self.replica_committed[rid]:
                raise SafetyViolation(
                    "commit-monotonicity",
                    f"replica {rid} committed rank {tuple(qc.rank)} after "
                    f"{tuple(self.replica_committed[rid])}")
            self.replica_committed[rid] = qc.rank
        entry = (qc.rank, qc.block_hash, qc)
        pos = self._insort_pos(entry)
        for neighbor in (pos - 1, pos + 1):
            if 0 <= neighbor < len(self.committed):
                self._check_pair(self.committed[neighbor][2], qc)
        held = self.commit_prefixes.get(qc.block_hash)
        if held is None or qc.prefix > held:
            self.commit_prefixes[qc.block_hash] = qc.prefix

    def _insort_pos(self, entry) -> int:
        key = (entry[0], entry[1])
        lo, hi = 0, len(self.committed)
        while lo < hi:
            mid = (lo + hi) // 2
            if (self.committed[mid][0], self.committed[mid][1]) < key:
                lo = mid + 1
            else:
                hi = mid
        self.committed.insert(lo, entry)
        return lo

    def _check_pair(self, a: QuorumCertificate, b: QuorumCertificate) -> None:
        lo, hi = (a, b) if a.rank <= b.rank else (b, a)
        if not self.registry.is_prefix_of(lo, hi):
            raise SafetyViolation(
                "prefix-containment",
                f"committed {lo!r} is not a prefix of committed {hi!r}",
                (lo, hi))

    # -- deliveries ----------------------------------------------------------

    def on_deliver(self, rid: int, ref: BatchRef) -> None:
        if rid not in self.cursor:
            return
        key = (ref.author, ref.sn)
        seen = self.delivered_sets[rid]
        if key in seen:
            raise SafetyViolation(
                "non-duplication",
                f"replica {rid} delivered sn {ref.sn} of author {ref.author} twice")
        seen.add(key)
        idx = self.cursor[rid]
        if idx < len(self.canonical):
            if self.canonical[idx] != ref:
                raise SafetyViolation(
                    "total-order",
                    f"replica {rid} delivered {ref} at position {idx}, "
                    f"others delivered {self.canonical[idx]}",
                    (self.canonical[idx], ref))
        else:
            self.canonical.append(ref)
        self.cursor[rid] = idx + 1
        h = self.log_digests[rid]
        h.update(ref.digest)
        h.update(ref.sn.to_bytes(8, "big"))
        h.update(ref.author.to_bytes(4, "big"))

    # -- vote discipline ------------------------------------------------------

    def on_qc_vote(self, rid: int, round_no: int, prefix: int) -> None:
        if rid not in self.honest:
            return
        if round_no <= self.timeout_round.get(rid, 0):
            raise SafetyViolation(
                "vote-discipline",
                f"replica {rid} QC-voted round {round_no} at or below its timeout")
        count = self.vote_counts.get((rid, round_no, "qc"), 0) + 1
        if count > 2:
            raise SafetyViolation(
                "vote-discipline", f"replica {rid} QC-voted >2 times in {round_no}")
        self.vote_counts[(rid, round_no, "qc")] = count
        rank = Rank(round_no, prefix)
        if rank <= self.last_qc_vote.get(rid, Rank(0, 0)):
            raise SafetyViolation(
                "vote-discipline",
                f"replica {rid} QC-vote rank {tuple(rank)} did not increase")
        self.last_qc_vote[rid] = rank

    def on_cc_vote(self, rid: int, round_no: int) -> None:
        if rid not in self.honest:
            return
        if round_no <= self.timeout_round.get(rid, 0):
            raise SafetyViolation(
                "vote-discipline",
                f"replica {rid} CC-voted round {round_no} at or below its timeout")
        count = self.vote_counts.get((rid, round_no, "cc"), 0) + 1
        if count > 1:
            raise SafetyViolation(
                "vote-discipline", f"replica {rid} CC-voted twice in {round_no}")
        self.vote_counts[(rid, round_no, "cc")] = count

    def on_tc_vote(self, rid: int, round_no: int) -> None:
        self.tc_rounds.add(round_no)
        if rid not in self.honest:
            return
        count = self.vote_counts.get((rid, round_no, "tc"), 0) + 1
        if count > 1:
            raise SafetyViolation(
                "vote-discipline", f"replica {rid} TC-voted twice in {round_no}")
        self.vote_counts[(rid, round_no, "tc")] = count
        self.timeout_round[rid] = max(self.timeout_round.get(rid, 0), round_no)

    # -- end-of-run summaries --------------------------------------------------

    def delivered_log_digest(self, rid: int) -> str:
        return self.log_digests[rid].hexdigest()

    def prefix_histogram(self) -> dict[int, int]:
        hist: dict[int, int] = {}
        for prefix in self.commit_prefixes.values():
            hist[prefix] = hist.get(prefix, 0) + 1
        return dict(sorted(hist.items()))
