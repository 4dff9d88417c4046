"""Version set: the single serialized path for every file-set change.

Applies version edits atomically (manifest append, then in-memory state),
hands refcounted version snapshots to readers, recovers state from the
manifest log, and defers physical file deletion until no reader can still
hold an older version.
"""

from __future__ import annotations

import os
import threading

from . import manifest as mf
from .errors import FormatError, IntegrityError
from .key_table import KeyTableReader
from .value_table import ValueTableReader
from .valuestore import ValueStore, VsstMeta
from .version import FileMeta, Version


def ksst_path(directory: str, number: int) -> str:
    return os.path.join(directory, f"{number:06d}.ksst")


def vsst_path(directory: str, number: int) -> str:
    return os.path.join(directory, f"{number:06d}.vsst")


def wal_path(directory: str, number: int) -> str:
    return os.path.join(directory, f"{number:06d}.wal")


class TableCache:
    """Open-reader cache; readers are immutable and shared across threads."""

    def __init__(self, directory: str, cache, stats):
        self.directory = directory
        self.cache = cache
        self.stats = stats
        self._lock = threading.Lock()
        self._key_readers: dict[int, KeyTableReader] = {}
        self._value_readers: dict[int, ValueTableReader] = {}

    def key_reader(self, number: int) -> KeyTableReader:
        with self._lock:
            r = self._key_readers.get(number)
            if r is None:
                r = KeyTableReader(
                    ksst_path(self.directory, number), number, self.cache, self.stats
                )
                self._key_readers[number] = r
            return r

    def value_reader(self, number: int) -> ValueTableReader:
        with self._lock:
            r = self._value_readers.get(number)
            if r is None:
                r = ValueTableReader(
                    vsst_path(self.directory, number), number, self.cache, self.stats
                )
                self._value_readers[number] = r
            return r

    def evict(self, number: int) -> None:
        with self._lock:
            r = self._key_readers.pop(number, None)
            if r:
                r.close()
            r = self._value_readers.pop(number, None)
            if r:
                r.close()
        if self.cache is not None:
            self.cache.invalidate_file(number)

    def close(self) -> None:
        with self._lock:
            for r in self._key_readers.values():
                r.close()
            for r in self._value_readers.values():
                r.close()
            self._key_readers.clear()
            self._value_readers.clear()


class VersionSet:
    def __init__(self, directory: str, cfg, cache=None, stats=None):
        self.directory = directory
        self.cfg = cfg
        self.lock = threading.RLock()
        self.registry = ValueStore()
        self.tables = TableCache(directory, cache, stats)
        self.current = Version(cfg.max_levels)
        self.next_file_number = 1
        self.last_sequence = 0
        self.log_number = 0
        self._manifest: mf.ManifestWriter | None = None
        self._manifest_number = 0
        self._old_versions: list[Version] = []
        self._pending_deletes: list[str] = []
        self.edit_listeners: list = []  # called with each applied edit

    # Numbering -----------------------------------------------------------

    def allocate_file_number(self) -> int:
        with self.lock:
            n = self.next_file_number
            self.next_file_number += 1
            return n

    def allocate_sequence(self) -> int:
        with self.lock:
            self.last_sequence += 1
            return self.last_sequence

    # Version references ----------------------------------------------------

    def acquire(self) -> Version:
        with self.lock:
            self.current.refs += 1
            return self.current

    def release(self, version: Version) -> None:
        with self.lock:
            version.refs -= 1
            self._gc_files_locked()

    def _gc_files_locked(self) -> None:
        # Physical deletion waits until no superseded version is referenced;
        # versions are short-lived so this converges promptly.
        if any(v.refs > 0 for v in self._old_versions):
            return
        self._old_versions.clear()
        pending, self._pending_deletes = self._pending_deletes, []
        for path in pending:
            try:
                os.remove(path)
            except FileNotFoundError:
                pass

    # Edit application --------------------------------------------------------

    def apply(self, edit: mf.VersionEdit) -> Version:
        """Persist the edit then install the new state. The caller must not
        hold table files open for writing; this is the commit point."""
        with self.lock:
            if edit.next_file_number is None:
                edit.next_file_number = self.next_file_number
            if edit.last_sequence is None:
                edit.last_sequence = self.last_sequence
            self._manifest.append(edit)
            new_version = self._apply_to_state(edit, self.current.clone())
            old = self.current
            self.current = new_version
            if old.refs > 0:
                self._old_versions.append(old)
            self._gc_files_locked()
            for listener in self.edit_listeners:
                listener(edit)
            return new_version

    def _apply_to_state(self, edit: mf.VersionEdit, version: Version) -> Version:
        reg = self.registry
        if edit.next_file_number is not None:
            self.next_file_number = max(self.next_file_number, edit.next_file_number)
        if edit.last_sequence is not None:
            self.last_sequence = max(self.last_sequence, edit.last_sequence)
        if edit.log_number is not None:
            self.log_number = max(self.log_number, edit.log_number)
        for m in edit.added_vsst:
            reg.register(
                VsstMeta(
                    m["file_number"],
                    m["total_entries"],
                    m["total_value_bytes"],
                    temperature=m["temperature"],
                    state=m.get("state", "live"),
                )
            )
        for old, new in edit.inherit:
            reg.retire(old, new)
        for old in edit.retired_vsst:
            reg.retire(old, None)
        for vsst, nbytes, entries in edit.garbage:
            reg.add_exposed_garbage(vsst, nbytes, entries)
        for level, number in edit.removed_ksst:
            files = version.levels[level]
            before = len(files)
            version.levels[level] = [m for m in files if m.file_number != number]
            if len(version.levels[level]) == before:
                raise IntegrityError(f"edit removes unknown kSST {number} at L{level}")
            self._pending_deletes.append(ksst_path(self.directory, number))
            self.tables.evict(number)
        for d in edit.added_ksst:
            meta = FileMeta.from_dict(d)
            version.levels[meta.level].append(meta)
            if meta.level > 0:
                version.levels[meta.level].sort(key=lambda m: m.smallest)
        for number in edit.removed_vsst:
            reg.drop(number)
            self._pending_deletes.append(vsst_path(self.directory, number))
            self.tables.evict(number)
        self._prune_inheritance(version)
        return version

    def _prune_inheritance(self, version: Version) -> None:
        referenced: set[int] = set()
        for meta in version.all_files():
            referenced.update(meta.dependencies)
        self.registry.prune_inheritance(referenced)

    # Snapshot / recovery -----------------------------------------------------

    def _snapshot_edit(self) -> mf.VersionEdit:
        edit = mf.VersionEdit(
            next_file_number=self.next_file_number,
            last_sequence=self.last_sequence,
            log_number=self.log_number,
        )
        for meta in self.current.all_files():
            edit.added_ksst.append(meta.as_dict())
        garbage = []
        for m in sorted(self.registry.files.values(), key=lambda m: m.file_number):
            # Non-live ghosts must survive snapshots: stale references still
            # resolve through them until pruning reaps the numbers.
            edit.added_vsst.append(m.as_dict())
            if m.state == "live" and (m.exposed_garbage_bytes or m.exposed_garbage_entries):
                garbage.append((m.file_number, m.exposed_garbage_bytes, m.exposed_garbage_entries))
        edit.garbage = garbage
        edit.inherit = sorted(self.registry.inheritance.items())
        return edit

    def open(self) -> None:
        """Load state from CURRENT/manifest (or start fresh), then roll a
        snapshot manifest so the edit log never grows without bound."""
        os.makedirs(self.directory, exist_ok=True)
        current = mf.read_current(self.directory)
        if current is not None:
            path = os.path.join(self.directory, current)
            if not os.path.exists(path):
                raise FormatError(path, "manifest", "CURRENT names a missing manifest")
            edits = mf.read_manifest(path)
            version = Version(self.cfg.max_levels)
            for edit in edits:
                version = self._apply_to_state(edit, version)
            self.current = version
            self._manifest_number = int(current.rsplit("-", 1)[1])
            # Deletions discovered during replay already happened pre-crash.
            self._pending_deletes.clear()
        self.registry.check_invariants()
        self._roll_manifest()

    def _roll_manifest(self) -> None:
        self._manifest_number += 1
        name = mf.manifest_name(self._manifest_number)
        path = os.path.join(self.directory, name)
        writer = mf.ManifestWriter(path, fsync=self.cfg.fsync)
        writer.append(self._snapshot_edit())
        old = self._manifest
        self._manifest = writer
        mf.write_current(self.directory, name, fsync=self.cfg.fsync)
        if old is not None:
            old.close()
        for entry in os.listdir(self.directory):
            if entry.startswith("MANIFEST-") and entry != name:
                os.remove(os.path.join(self.directory, entry))

    def live_table_numbers(self) -> tuple[set[int], set[int]]:
        ksst = {m.file_number for m in self.current.all_files()}
        # Ghost metas linger in the registry after their files are gone; a
        # file on disk for a non-live number is a crashed job's leftover.
        vsst = {n for n, m in self.registry.files.items() if m.state == "live"}
        return ksst, vsst

    def remove_orphans(self) -> list[str]:
        """Delete table/WAL files the recovered state does not reference
        (outputs of jobs that crashed before their commit point)."""
        ksst, vsst = self.live_table_numbers()
        removed = []
        for entry in os.listdir(self.directory):
            path = os.path.join(self.directory, entry)
            stem, _, ext = entry.partition(".")
            if not stem.isdigit():
                continue
            number = int(stem)
            orphan = (
                (ext == "ksst" and number not in ksst)
                or (ext == "vsst" and number not in vsst)
                or (ext == "wal" and number < self.log_number)
            )
            if orphan:
                os.remove(path)
                removed.append(entry)
        return removed

    def disk_usage(self) -> int:
        total = 0
        with os.scandir(self.directory) as it:
            for entry in it:
                if entry.is_file():
                    total += entry.stat().st_size
        return total

    def close(self) -> None:
        if self._manifest is not None:
            self._manifest.close()
            self._manifest = None
        self.tables.close()
