"""Write-ahead log with per-record CRC framing.

Record framing: crc32(payload) u32 | payload_len u32 | payload, where the
payload is seq u64 | kind u8 | key_len u32 | key | val_len u32 | value.
Replay stops at the first torn or corrupt record and reports the byte
offset of the valid prefix so recovery can truncate the tail.
"""

from __future__ import annotations

import os
from typing import Iterator

from .encoding import U8, U32, U64, crc32

HEADER = 8


def encode_record(seq: int, kind: int, key: bytes, value: bytes) -> bytes:
    payload = (
        U64.pack(seq) + U8.pack(kind) + U32.pack(len(key)) + key + U32.pack(len(value)) + value
    )
    return U32.pack(crc32(payload)) + U32.pack(len(payload)) + payload


class WalWriter:
    def __init__(self, path: str, fsync: bool = False):
        self.path = path
        self.fsync = fsync
        self._f = open(path, "ab")

    def append(self, seq: int, kind: int, key: bytes, value: bytes) -> int:
        rec = encode_record(seq, kind, key, value)
        self._f.write(rec)
        self._f.flush()
        if self.fsync:
            os.fsync(self._f.fileno())
        return len(rec)

    def close(self) -> None:
        self._f.close()


def replay(path: str) -> tuple[list[tuple[int, int, bytes, bytes]], int]:
    """Decode records until EOF or damage; returns (records, valid_prefix_len)."""
    with open(path, "rb") as f:
        buf = f.read()
    records = []
    pos = 0
    while pos + HEADER <= len(buf):
        (want,) = U32.unpack_from(buf, pos)
        (length,) = U32.unpack_from(buf, pos + 4)
        if pos + HEADER + length > len(buf):
            break  # torn tail
        payload = buf[pos + HEADER : pos + HEADER + length]
        if crc32(payload) != want:
            break  # corrupt tail; valid prefix ends here
        seq = U64.unpack_from(payload, 0)[0]
        kind = payload[8]
        (klen,) = U32.unpack_from(payload, 9)
        key = payload[13 : 13 + klen]
        (vlen,) = U32.unpack_from(payload, 13 + klen)
        value = payload[17 + klen : 17 + klen + vlen]
        records.append((seq, kind, key, value))
        pos += HEADER + length
    return records, pos


def truncate_to(path: str, length: int) -> None:
    with open(path, "r+b") as f:
        f.truncate(length)


def iter_wal_files(directory: str) -> Iterator[tuple[int, str]]:
    for name in sorted(os.listdir(directory)):
        if name.endswith(".wal"):
            try:
                number = int(name.split(".")[0])
            except ValueError:
                continue
            yield number, os.path.join(directory, name)
