"""Canonical byte encoding used for hashing and simulated wire messages.

Every value is encoded as a one-byte type tag followed by a length-prefixed
body, and composite values encode their fields in declaration order.  The
encoding is stable across runs and platforms, which makes content digests
(and therefore simulation traces) reproducible.
"""

from __future__ import annotations

import hashlib
from struct import pack as _spack

DIGEST_SIZE = 32

_TAG_INT = b"i"
_TAG_BYTES = b"b"
_TAG_STR = b"s"
_TAG_SEQ = b"l"
_TAG_NONE = b"n"
_TAG_FLOAT = b"f"


def encode(value) -> bytes:
    """Encode one value (int, float, str, bytes, None, or a sequence of them)."""
    if isinstance(value, bool):
        raise TypeError("booleans are not part of the canonical encoding")
    if isinstance(value, int):
        return _TAG_INT + _spack(">q", value)
    if isinstance(value, bytes):
        return _TAG_BYTES + _spack(">I", len(value)) + value
    if isinstance(value, str):
        raw = value.encode("utf-8")
        return _TAG_STR + _spack(">I", len(raw)) + raw
    if isinstance(value, float):
        return _TAG_FLOAT + _spack(">d", value)
    if value is None:
        return _TAG_NONE
    if isinstance(value, (tuple, list)):
        parts = [_TAG_SEQ, _spack(">I", len(value))]
        parts.extend(encode(item) for item in value)
        return b"".join(parts)
    raise TypeError(f"cannot canonically encode {type(value).__name__}")


def pack(*fields) -> bytes:
    """Encode several fields in order into one canonical byte string."""
    return b"".join(encode(f) for f in fields)


def digest(*fields) -> bytes:
    """Collision-resistant digest over the canonical encoding of `fields`."""
    return hashlib.blake2b(pack(*fields), digest_size=DIGEST_SIZE).digest()
