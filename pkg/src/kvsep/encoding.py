"""Binary primitives shared by the on-disk formats.

All integers are fixed-width little-endian (u32 lengths, u64 offsets and
sizes); variable bytes are length-prefixed. Regions carry trailing CRC32
checksums over their payload.
"""

from __future__ import annotations

import struct
import zlib

U32 = struct.Struct("<I")
U64 = struct.Struct("<Q")
U8 = struct.Struct("<B")

U32_SIZE = 4
U64_SIZE = 8


def crc32(data: bytes) -> int:
    return zlib.crc32(data) & 0xFFFFFFFF


def pack_bytes(b: bytes) -> bytes:
    return U32.pack(len(b)) + b


class Cursor:
    """Sequential decoder over a bytes buffer."""

    __slots__ = ("buf", "pos")

    def __init__(self, buf: bytes, pos: int = 0):
        self.buf = buf
        self.pos = pos

    def u8(self) -> int:
        (v,) = U8.unpack_from(self.buf, self.pos)
        self.pos += 1
        return v

    def u32(self) -> int:
        (v,) = U32.unpack_from(self.buf, self.pos)
        self.pos += U32_SIZE
        return v

    def u64(self) -> int:
        (v,) = U64.unpack_from(self.buf, self.pos)
        self.pos += U64_SIZE
        return v

    def bytes_(self) -> bytes:
        n = self.u32()
        b = self.buf[self.pos : self.pos + n]
        if len(b) != n:
            raise ValueError("truncated length-prefixed bytes")
        self.pos += n
        return b

    def remaining(self) -> int:
        return len(self.buf) - self.pos


def seal(payload: bytes) -> bytes:
    """Append a CRC32 trailer to a region payload."""
    return payload + U32.pack(crc32(payload))


def unseal(region: bytes, path: str, name: str) -> bytes:
    """Verify and strip the CRC32 trailer, raising FormatError on mismatch."""
    from .errors import FormatError

    if len(region) < U32_SIZE:
        raise FormatError(path, name, "short region")
    payload, tail = region[:-U32_SIZE], region[-U32_SIZE:]
    (want,) = U32.unpack(tail)
    if crc32(payload) != want:
        raise FormatError(path, name, "crc mismatch")
    return payload
