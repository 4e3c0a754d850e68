"""Wire form for tuple streams: length-prefixed key and value bytes.

Each record is ``u32 key_len | key | u32 value_len | value`` with
little-endian lengths. The format is what partition items and shuffle
blocks look like at rest on file-backed spaces, and what persisted
partitions contain.
"""

from __future__ import annotations

import struct

_LEN = struct.Struct("<I")


def encode_tuples(pairs) -> bytes:
    """Serialize an iterable of (key bytes, value bytes) pairs."""
    parts = []
    append = parts.append
    pack = _LEN.pack
    for k, v in pairs:
        append(pack(len(k)))
        append(k)
        append(pack(len(v)))
        append(v)
    return b"".join(parts)


def decode_tuples(buf: bytes) -> list:
    """Parse a tuple stream back into a list of (key, value) pairs.

    Raises ``ValueError`` on truncated input rather than returning a
    partial read.
    """
    out = []
    pos = 0
    end = len(buf)
    unpack = _LEN.unpack_from
    while pos < end:
        if pos + 4 > end:
            raise ValueError("truncated tuple stream: key length")
        (klen,) = unpack(buf, pos)
        pos += 4
        if pos + klen + 4 > end:
            raise ValueError("truncated tuple stream: key or value length")
        k = buf[pos:pos + klen]
        pos += klen
        (vlen,) = unpack(buf, pos)
        pos += 4
        if pos + vlen > end:
            raise ValueError("truncated tuple stream: value")
        v = buf[pos:pos + vlen]
        pos += vlen
        out.append((k, v))
    return out
