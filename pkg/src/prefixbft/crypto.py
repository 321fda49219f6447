"""Non-interactive aggregate signatures over (tag, message) pairs.

Each replica holds one keypair per tag in [0, M]: votes that carry a prefix
sign with the key share matching that prefix, so a verifier checks claimed
prefixes purely through key selection.  Messages without a prefix component
(availability votes, timeout votes) sign under tag 0 with the rank encoded
in the message bytes.

Two interchangeable schemes are provided:

* ``nocommit`` - per-(signer, tag) Ed25519 keypairs with the aggregate
  realized as a fold of per-signer signatures; verification costs O(|set|)
  signature checks.  Deterministic (RFC 8032 signing).
* ``test`` - keyed-hash tags, byte-identical on identical inputs and fast
  enough for large simulation campaigns.  Insecure by construction: public
  shares embed the secret, so it must never be used outside simulation.
"""

from __future__ import annotations

import hashlib
from typing import Iterable, NamedTuple, Optional

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric import ed25519

from .serialization import pack

PARTIAL_SIZE = 16  # test-scheme signature bytes


class PartialSignature(NamedTuple):
    signer: int
    tag: int
    data: bytes


class AggregateScheme:
    """Common state for the per-(signer, tag) share schemes."""

    name = "abstract"
    insecure = False

    def __init__(self, seed: str, n: int, max_tag: int):
        self.n = n
        self.max_tag = max_tag
        self.seed = seed

    def _check_tag(self, tag: int) -> None:
        if not (0 <= tag <= self.max_tag):
            raise ValueError(f"tag {tag} outside [0, {self.max_tag}]")

    def psign(self, signer: int, tag: int, msg: bytes) -> PartialSignature:
        raise NotImplementedError

    def pver(self, signer: int, tag: int, msg: bytes, partial: PartialSignature) -> bool:
        raise NotImplementedError

    def combine(self, partials: Iterable[tuple[int, PartialSignature]]) -> Optional[bytes]:
        raise NotImplementedError

    def verify_agg(self, claims: Iterable[tuple[int, int, bytes]],
                   aggregate: bytes) -> bool:
        raise NotImplementedError


def _sorted_unique(partials) -> Optional[list[tuple[int, PartialSignature]]]:
    items = sorted(partials)
    if not items:
        return None
    signers = [s for s, _ in items]
    if len(set(signers)) != len(signers):
        return None
    return items


class InsecureTestScheme(AggregateScheme):
    """Keyed-hash shares: deterministic and fast, for simulation only."""

    name = "test"
    insecure = True

    def __init__(self, seed: str, n: int, max_tag: int):
        super().__init__(seed, n, max_tag)
        self._keys = [
            [hashlib.blake2b(pack("sk", seed, i, t), digest_size=32).digest()
             for t in range(max_tag + 1)]
            for i in range(n)
        ]

    def _raw_sign(self, signer: int, tag: int, msg: bytes) -> bytes:
        key = self._keys[signer][tag]
        return hashlib.blake2b(msg, digest_size=PARTIAL_SIZE, key=key).digest()

    def psign(self, signer: int, tag: int, msg: bytes) -> PartialSignature:
        self._check_tag(tag)
        return PartialSignature(signer, tag, self._raw_sign(signer, tag, msg))

    def pver(self, signer: int, tag: int, msg: bytes, partial: PartialSignature) -> bool:
        if not (0 <= tag <= self.max_tag) or not (0 <= signer < self.n):
            return False
        return partial.data == self._raw_sign(signer, tag, msg)

    def combine(self, partials):
        items = _sorted_unique(partials)
        if items is None:
            return None
        h = hashlib.blake2b(digest_size=PARTIAL_SIZE)
        for signer, partial in items:
            h.update(pack(signer, partial.data))
        return h.digest()

    def verify_agg(self, claims, aggregate: bytes) -> bool:
        items = sorted(claims)
        if not items or not isinstance(aggregate, bytes):
            return False
        signers = [s for s, _, _ in items]
        if len(set(signers)) != len(signers):
            return False
        h = hashlib.blake2b(digest_size=PARTIAL_SIZE)
        for signer, tag, msg in items:
            if not (0 <= tag <= self.max_tag) or not (0 <= signer < self.n):
                return False
            h.update(pack(signer, self._raw_sign(signer, tag, msg)))
        return h.digest() == aggregate


class NoCommitEd25519Scheme(AggregateScheme):
    """Per-(signer, tag) Ed25519 shares; aggregate is a fold of signatures."""

    name = "nocommit"
    _SIG_LEN = 64

    def __init__(self, seed: str, n: int, max_tag: int):
        super().__init__(seed, n, max_tag)
        self._sks = []
        self._pks = []
        for i in range(n):
            row_sk, row_pk = [], []
            for t in range(max_tag + 1):
                material = hashlib.blake2b(
                    pack("ed25519", seed, i, t), digest_size=32).digest()
                sk = ed25519.Ed25519PrivateKey.from_private_bytes(material)
                row_sk.append(sk)
                row_pk.append(sk.public_key())
            self._sks.append(row_sk)
            self._pks.append(row_pk)

    def psign(self, signer: int, tag: int, msg: bytes) -> PartialSignature:
        self._check_tag(tag)
        return PartialSignature(signer, tag, self._sks[signer][tag].sign(msg))

    def pver(self, signer: int, tag: int, msg: bytes, partial: PartialSignature) -> bool:
        if not (0 <= tag <= self.max_tag) or not (0 <= signer < self.n):
            return False
        if len(partial.data) != self._SIG_LEN:
            return False
        try:
            self._pks[signer][tag].verify(partial.data, msg)
            return True
        except InvalidSignature:
            return False

    def combine(self, partials):
        items = _sorted_unique(partials)
        if items is None:
            return None
        out = bytearray()
        for signer, partial in items:
            if len(partial.data) != self._SIG_LEN:
                return None
            out += signer.to_bytes(4, "big") + partial.data
        return bytes(out)

    def verify_agg(self, claims, aggregate: bytes) -> bool:
        items = sorted(claims)
        if not items or not isinstance(aggregate, bytes):
            return False
        record = 4 + self._SIG_LEN
        if len(aggregate) != record * len(items):
            return False
        signers = [s for s, _, _ in items]
        if len(set(signers)) != len(signers):
            return False
        for idx, (signer, tag, msg) in enumerate(items):
            if not (0 <= tag <= self.max_tag) or not (0 <= signer < self.n):
                return False
            chunk = aggregate[idx * record:(idx + 1) * record]
            if int.from_bytes(chunk[:4], "big") != signer:
                return False
            try:
                self._pks[signer][tag].verify(chunk[4:], msg)
            except InvalidSignature:
                return False
        return True


SCHEMES = {
    InsecureTestScheme.name: InsecureTestScheme,
    NoCommitEd25519Scheme.name: NoCommitEd25519Scheme,
}


def make_scheme(name: str, seed: str, n: int, max_tag: int) -> AggregateScheme:
    """Build all replicas' key shares reproducibly from a scenario seed."""
    try:
        cls = SCHEMES[name]
    except KeyError:
        raise ValueError(f"unknown aggregate signature scheme {name!r}") from None
    return cls(seed, n, max_tag)
