"""In-memory write buffer: newest version per key, sorted iteration."""

from __future__ import annotations

from bisect import bisect_left, insort
from typing import Iterator

PUT = 0
DELETE = 1

# Rough per-entry bookkeeping charge used for rotation sizing.
ENTRY_OVERHEAD = 48


class Memtable:
    def __init__(self):
        self._map: dict[bytes, tuple[int, int, bytes]] = {}
        self._sorted: list[bytes] = []
        self.bytes = 0

    def __len__(self) -> int:
        return len(self._map)

    def put(self, key: bytes, seq: int, kind: int, value: bytes = b"") -> None:
        old = self._map.get(key)
        if old is None:
            insort(self._sorted, key)
            self.bytes += len(key) + ENTRY_OVERHEAD
        else:
            self.bytes -= len(old[2])
        self._map[key] = (seq, kind, value)
        self.bytes += len(value)

    def get(self, key: bytes) -> tuple[int, int, bytes] | None:
        return self._map.get(key)

    def iter_sorted(self, start: bytes | None = None) -> Iterator[tuple[bytes, int, int, bytes]]:
        i = 0 if start is None else bisect_left(self._sorted, start)
        for key in self._sorted[i:]:
            seq, kind, value = self._map[key]
            yield key, seq, kind, value
