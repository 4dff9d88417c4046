"""LRU set of recently compaction-dropped user keys.

Keys merged away during compaction are overwrite/delete victims, so their
reappearance in a later write marks the data as hot. Each key is charged
its length plus a fixed overhead (a 24-byte key charges 32 bytes).
"""

from __future__ import annotations

import threading
from collections import OrderedDict

KEY_OVERHEAD = 8


class DropCache:
    def __init__(self, capacity_bytes: int = 16 << 20):
        self.capacity = capacity_bytes
        self._lock = threading.Lock()
        self._keys: OrderedDict[bytes, int] = OrderedDict()
        self._bytes = 0

    @property
    def charged_bytes(self) -> int:
        return self._bytes

    def __len__(self) -> int:
        return len(self._keys)

    def note_dropped(self, key: bytes) -> None:
        charge = len(key) + KEY_OVERHEAD
        with self._lock:
            old = self._keys.pop(key, None)
            if old is not None:
                self._bytes -= old
            self._keys[key] = charge
            self._bytes += charge
            while self._bytes > self.capacity and self._keys:
                _, c = self._keys.popitem(last=False)
                self._bytes -= c

    def is_hot(self, key: bytes) -> bool:
        with self._lock:
            if key in self._keys:
                self._keys.move_to_end(key)
                return True
            return False
