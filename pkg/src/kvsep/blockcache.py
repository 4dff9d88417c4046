"""Shared block cache with a two-priority eviction policy.

One byte budget, two LRU segments. High-priority blocks (key-table
reference blocks, value-table index partitions) are demoted to the low
segment once the high segment outgrows its budget fraction; capacity
eviction consumes low-priority victims first, so a high-priority block is
never dropped while a colder low-priority one could be.
"""

from __future__ import annotations

import threading
from collections import OrderedDict

ENTRY_OVERHEAD = 64


class _Entry:
    __slots__ = ("value", "charge", "kind")

    def __init__(self, value, charge, kind):
        self.value = value
        self.charge = charge
        self.kind = kind


class BlockCache:
    def __init__(self, capacity_bytes: int, high_fraction: float = 0.5, stats=None):
        self.capacity = capacity_bytes
        self.high_budget = int(capacity_bytes * high_fraction)
        self.stats = stats
        self._lock = threading.Lock()
        self._high: OrderedDict = OrderedDict()
        self._low: OrderedDict = OrderedDict()
        self._high_bytes = 0
        self._low_bytes = 0
        self._by_file: dict[int, set] = {}
        self._inflight: dict = {}
        self.hits = 0
        self.misses = 0

    @property
    def charged_bytes(self) -> int:
        return self._high_bytes + self._low_bytes

    def _note(self, key) -> object | None:
        entry = self._high.get(key)
        if entry is not None:
            self._high.move_to_end(key)
            return entry
        entry = self._low.get(key)
        if entry is not None:
            self._low.move_to_end(key)
            return entry
        return None

    def get_or_load(self, key, kind: str, priority: str, loader):
        """Return the cached block, loading it once under concurrent misses.

        ``loader`` returns (value, nbytes); file I/O inside it is charged to
        the caller's component as usual.
        """
        if self.stats is not None:
            self.stats.note_block_access(kind)
        while True:
            with self._lock:
                entry = self._note(key)
                if entry is not None:
                    self.hits += 1
                    return entry.value
                wait = self._inflight.get(key)
                if wait is None:
                    self._inflight[key] = threading.Event()
                    break
            wait.wait()
        try:
            value, nbytes = loader()
        except BaseException:
            with self._lock:
                self._inflight.pop(key).set()
            raise
        with self._lock:
            self.misses += 1
            self._insert(key, value, nbytes + ENTRY_OVERHEAD, kind, priority)
            self._inflight.pop(key).set()
        return value

    def _insert(self, key, value, charge, kind, priority) -> None:
        self._evict_key(key)
        entry = _Entry(value, charge, kind)
        if priority == "high":
            self._high[key] = entry
            self._high_bytes += charge
            while self._high_bytes > self.high_budget and len(self._high) > 1:
                k, e = self._high.popitem(last=False)
                self._high_bytes -= e.charge
                self._low[k] = e
                self._low_bytes += e.charge
        else:
            self._low[key] = entry
            self._low_bytes += charge
        self._by_file.setdefault(key[0], set()).add(key)
        self._enforce_capacity()

    def _enforce_capacity(self) -> None:
        while self._high_bytes + self._low_bytes > self.capacity:
            if self._low:
                k, e = self._low.popitem(last=False)
                self._low_bytes -= e.charge
            elif self._high:
                k, e = self._high.popitem(last=False)
                self._high_bytes -= e.charge
            else:
                return
            self._forget(k)

    def _forget(self, key) -> None:
        files = self._by_file.get(key[0])
        if files is not None:
            files.discard(key)
            if not files:
                del self._by_file[key[0]]

    def _evict_key(self, key) -> None:
        entry = self._high.pop(key, None)
        if entry is not None:
            self._high_bytes -= entry.charge
        entry = self._low.pop(key, None)
        if entry is not None:
            self._low_bytes -= entry.charge
        self._forget(key)

    def invalidate_file(self, file_number: int) -> None:
        with self._lock:
            for key in list(self._by_file.get(file_number, ())):
                self._evict_key(key)

    def contains(self, key) -> bool:
        with self._lock:
            return key in self._high or key in self._low

    def cached_files(self) -> set[int]:
        with self._lock:
            return set(self._by_file)
