"""Value-file registry: per-file garbage accounting and number inheritance.

When garbage collection rewrites a value file, surviving records move to a
successor file and the old number maps to the new one instead of rewriting
every index entry. Readers resolve any historical number through the map
to the file that currently holds the data.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

from .errors import AccountingError, IntegrityError

HOT = "hot"
COLD = "cold"

LIVE = "live"
SUPERSEDED = "superseded"
DELETABLE = "deletable"


@dataclass
class VsstMeta:
    file_number: int
    total_entries: int
    total_value_bytes: int
    temperature: str = COLD
    state: str = LIVE
    successor: int | None = None
    exposed_garbage_bytes: int = 0
    exposed_garbage_entries: int = 0
    anomalies: int = field(default=0, repr=False)

    def as_dict(self) -> dict:
        return {
            "file_number": self.file_number,
            "total_entries": self.total_entries,
            "total_value_bytes": self.total_value_bytes,
            "temperature": self.temperature,
            "state": self.state,
        }

    def garbage_ratio(self) -> float:
        if self.total_value_bytes <= 0:
            return 0.0
        return self.exposed_garbage_bytes / self.total_value_bytes


class ValueStore:
    """Registry of value files plus the inheritance map.

    Mutations happen under the owner's manifest serialization; reads
    (resolve, ratios) are safe concurrently because successors are
    installed before predecessors are retired.
    """

    def __init__(self):
        self._lock = threading.RLock()
        self.files: dict[int, VsstMeta] = {}
        self.inheritance: dict[int, int] = {}

    # Registration ------------------------------------------------------

    def register(self, meta: VsstMeta) -> None:
        with self._lock:
            self.files[meta.file_number] = meta

    def retire(self, file_number: int, successor: int | None) -> None:
        with self._lock:
            meta = self.files.get(file_number)
            if successor is None:
                if meta is None:
                    raise AccountingError(f"retiring unknown vSST {file_number}")
                meta.state = DELETABLE
                return
            # meta may be absent for snapshot-recovered intermediate hops
            # that only survive as arcs.
            if meta is not None:
                meta.state = SUPERSEDED
                meta.successor = successor
            self.inheritance[file_number] = successor
            self._check_acyclic(file_number)

    def _check_acyclic(self, start: int) -> None:
        seen = set()
        node = start
        while node in self.inheritance:
            if node in seen:
                raise IntegrityError(f"inheritance cycle through vSST {start}")
            seen.add(node)
            node = self.inheritance[node]

    def drop(self, file_number: int) -> None:
        """Note physical removal. The meta stays as a non-live ghost until
        no key-file dependency names the number, keeping stale references
        resolvable; pruning reaps it later."""
        with self._lock:
            meta = self.files.get(file_number)
            if meta is not None and meta.state == LIVE:
                meta.state = DELETABLE

    # Resolution ---------------------------------------------------------

    def resolve(self, file_number: int) -> int:
        """Follow the successor chain to the live number, shortening the
        in-memory path; persisted records are untouched."""
        with self._lock:
            if file_number not in self.files and file_number not in self.inheritance:
                raise IntegrityError(f"unknown vSST {file_number}")
            chain = []
            node = file_number
            while node in self.inheritance:
                chain.append(node)
                node = self.inheritance[node]
            for old in chain[:-1]:
                self.inheritance[old] = node
            return node

    def get(self, file_number: int) -> VsstMeta | None:
        with self._lock:
            return self.files.get(file_number)

    def live_files(self) -> list[VsstMeta]:
        with self._lock:
            return [m for m in self.files.values() if m.state == LIVE]

    # Garbage accounting ---------------------------------------------------

    def add_exposed_garbage(self, file_number: int, nbytes: int, entries: int) -> int:
        """Credit dropped record bytes against the resolved live file.

        Returns the live file number the credit landed on. Over-accounting
        clamps at the file's total and counts as an anomaly.
        """
        with self._lock:
            live = self.resolve(file_number)
            meta = self.files.get(live)
            if meta is None:
                raise AccountingError(f"garbage credit against missing vSST {live}")
            if meta.state != LIVE:
                # The record's file was already collected away; nothing to
                # reclaim for this drop.
                return live
            meta.exposed_garbage_bytes += nbytes
            meta.exposed_garbage_entries += entries
            if meta.exposed_garbage_bytes > meta.total_value_bytes:
                meta.exposed_garbage_bytes = meta.total_value_bytes
                meta.anomalies += 1
            if meta.exposed_garbage_entries > meta.total_entries:
                meta.exposed_garbage_entries = meta.total_entries
                meta.anomalies += 1
            return live

    def garbage_ratio(self, file_number: int) -> float:
        with self._lock:
            meta = self.files.get(file_number)
            if meta is None:
                raise AccountingError(f"garbage ratio of unknown vSST {file_number}")
            return meta.garbage_ratio()

    def total_exposed_garbage(self) -> int:
        with self._lock:
            return sum(m.exposed_garbage_bytes for m in self.files.values() if m.state == LIVE)

    def total_live_value_bytes(self) -> int:
        with self._lock:
            return sum(m.total_value_bytes for m in self.files.values() if m.state == LIVE)

    # Inheritance hygiene -------------------------------------------------

    def prune_inheritance(self, referenced: set[int]) -> list[int]:
        """Drop map entries whose old number no live index entry mentions.

        ``referenced`` is the union of dependency file numbers across live
        key files. Entries must survive as long as any index entry might
        still name the old number. Returns the pruned numbers.
        """
        with self._lock:
            # Keep every map node reachable from a referenced number: an
            # intermediate hop in a still-referenced chain must survive even
            # if nothing names it directly.
            keep: set[int] = set()
            for start in referenced:
                node = start
                while node in self.inheritance and node not in keep:
                    keep.add(node)
                    node = self.inheritance[node]
            pruned = [old for old in self.inheritance if old not in keep]
            for old in pruned:
                del self.inheritance[old]
                meta = self.files.get(old)
                if meta is not None and meta.state == SUPERSEDED:
                    meta.state = DELETABLE
            # Reap unreferenced ghosts of files already gone from disk.
            for number, meta in list(self.files.items()):
                if meta.state != LIVE and number not in referenced and number not in keep:
                    del self.files[number]
            return pruned

    def check_invariants(self) -> None:
        """Structural checks: map acyclic, every chain ends at a registered
        file. A chain may end at a non-live ghost only when that terminal
        was itself fully collected (nothing reachable pins bytes)."""
        with self._lock:
            for start in self.inheritance:
                seen = set()
                node = start
                while node in self.inheritance:
                    if node in seen:
                        raise IntegrityError(f"inheritance cycle through {start}")
                    seen.add(node)
                    node = self.inheritance[node]
                meta = self.files.get(node)
                if meta is None:
                    raise IntegrityError(
                        f"inheritance chain from {start} ends at unknown {node}"
                    )
                if meta.state == SUPERSEDED:
                    raise IntegrityError(
                        f"chain from {start} ends at superseded {node} with no arc"
                    )
