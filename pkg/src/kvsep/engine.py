"""The store: write path, read path, flush, recovery, and maintenance.

Writes append to the write-ahead log, land in the memtable, and rotate to
immutable memtables that flush into a level-0 key table. Values at or
above the separation threshold leave the index tree at flush time: they
are written to hot or cold value tables (routed by the dropped-key cache)
and replaced by reference entries. Reads merge the memtables and levels,
newest first, resolving references through the inheritance map.

Maintenance (flush, compaction, garbage collection) runs inline in the
writing thread by default, which makes runs deterministic; with
``background_workers > 0`` a worker thread drains the same queue while
foreground operations proceed concurrently.
"""

from __future__ import annotations

import heapq
import os
import threading
import time

from . import stats as st
from .blockcache import BlockCache
from .compaction import CompactionRunner
from .config import EngineConfig
from .dropcache import DropCache
from .errors import IntegrityError, StorageError
from .gc import GarbageCollector, GcPolicy, pick_gc_candidates
from .key_table import INLINE, REF, TOMBSTONE, IndexEntry, KeyTableBuilder
from .manifest import VersionEdit
from .memtable import DELETE, PUT, Memtable
from .space import SpaceThrottle, compute_space_stats
from .value_table import ValueTableBuilder
from .valuestore import COLD, HOT
from .version import pick_compaction
from .versionset import VersionSet, ksst_path, vsst_path, wal_path
from .wal import WalWriter, iter_wal_files, replay, truncate_to

CONFIG_FILE = "engine.conf"


class CrashPoint(Exception):
    """Raised by test hooks to simulate a crash at a commit boundary."""


class Engine:
    def __init__(self, directory: str, cfg: EngineConfig):
        self.directory = directory
        self.cfg = cfg
        self.stats = st.Stats()
        self.cache = BlockCache(
            cfg.block_cache_size, cfg.cache_high_priority_fraction, self.stats
        )
        self.dropcache = DropCache(cfg.dropcache_capacity)
        self.vset = VersionSet(directory, cfg, self.cache, self.stats)
        self.throttle = SpaceThrottle(
            cfg.space_quota, cfg.throttle_soft_ratio,
            cfg.throttle_max_delay, cfg.throttle_halt_timeout,
        )
        self.hooks: dict = {}
        self.compactor = CompactionRunner(self.vset, cfg, self.dropcache, self.hooks)
        self.policy = GcPolicy(
            cfg.gc_garbage_threshold, cfg.gc_aggressive_threshold, cfg.gc_max_concurrent_jobs
        )
        self.collector = GarbageCollector(
            self.vset, cfg, self.policy, self.dropcache, self._lookup_ref, self.hooks
        )
        self.space_series: list = []

        self._write_lock = threading.RLock()
        self._memtable = Memtable()
        self._immutables: list[tuple[Memtable, list[int]]] = []
        self._wal: WalWriter | None = None
        self._wal_number = 0
        self._wal_bytes = 0
        self._unpolled_bytes = 0
        self._closed = False
        self._maintenance_lock = threading.RLock()
        self._maintenance_dirty = False
        self._maintenance_error: BaseException | None = None
        self._bg_cond = threading.Condition()
        self._bg_thread: threading.Thread | None = None
        self._bg_wake = False

    # Lifecycle -----------------------------------------------------------

    @classmethod
    def open(cls, directory: str, config: EngineConfig | None = None) -> "Engine":
        os.makedirs(directory, exist_ok=True)
        conf_path = os.path.join(directory, CONFIG_FILE)
        if config is None:
            config = EngineConfig.from_file(conf_path) if os.path.exists(conf_path) else EngineConfig()
        config.validate()
        engine = cls(directory, config)
        engine._recover()
        config.to_file(conf_path)
        if config.background_workers > 0:
            engine._bg_thread = threading.Thread(
                target=engine._background_loop, name="kvsep-maintenance", daemon=True
            )
            engine._bg_thread.start()
        return engine

    def _recover(self) -> None:
        self.vset.open()
        self.vset.edit_listeners.append(self._on_edit)
        self.vset.remove_orphans()

        # Replay pending logs oldest-first; sequence order resolves versions.
        recovered = Memtable()
        replayed_wals: list[int] = []
        for number, path in iter_wal_files(self.directory):
            if number < self.vset.log_number:
                os.remove(path)
                continue
            records, valid = replay(path)
            if valid < os.path.getsize(path):
                truncate_to(path, valid)
            for seq, kind, key, value in records:
                recovered.put(key, seq, kind, value)
                if seq > self.vset.last_sequence:
                    self.vset.last_sequence = seq
            replayed_wals.append(number)

        if len(recovered):
            self._immutables.append((recovered, replayed_wals))
        self._rotate_wal()
        if self._immutables:
            self._flush_oldest()
            self.drain_maintenance()
        else:
            # Make sure pre-existing logs retire once data is safe.
            for number in replayed_wals:
                os.remove(wal_path(self.directory, number))
        self._poll_space()

    def close(self) -> None:
        if self._closed:
            return
        self.flush_now()
        self.drain_maintenance()
        self._closed = True
        if self._bg_thread is not None:
            with self._bg_cond:
                self._bg_wake = True
                self._bg_cond.notify_all()
            self._bg_thread.join(timeout=10)
        if self._wal is not None:
            self._wal.close()
        self.vset.close()

    def abandon(self) -> None:
        """Drop the engine without flushing anything; used by crash tests."""
        self._closed = True
        if self._wal is not None:
            self._wal.close()
        self.vset.close()

    # Write path ------------------------------------------------------------

    def put(self, key: bytes, value: bytes) -> None:
        self._write(key, value, PUT)

    def delete(self, key: bytes) -> None:
        self._write(key, b"", DELETE)

    def _write(self, key: bytes, value: bytes, kind: int) -> None:
        if self._closed:
            raise StorageError("engine is closed")
        if not key:
            raise ValueError("key must be non-empty")
        if self._maintenance_error is not None:
            raise self._maintenance_error
        decision, delay = self.throttle.admit(len(key) + len(value))
        if decision == "delay":
            time.sleep(delay)
        elif decision == "halt":
            reclaim = self._reclaim_step if self.cfg.background_workers == 0 else None
            self.throttle.wait_until_open(reclaim, poll=self.vset.disk_usage)
        with self._write_lock:
            self._wait_for_flush_room()
            seq = self.vset.allocate_sequence()
            written = self._wal.append(seq, kind, key, value)
            self._wal_bytes += written
            self._unpolled_bytes += written
            self.stats.inc("foreground.logical_write_bytes", len(key) + len(value))
            self._memtable.put(key, seq, kind, value)
            # Overwrite-heavy workloads keep the memtable small while the
            # log grows; rotating on log size bounds both.
            if (
                self._memtable.bytes >= self.cfg.memtable_size
                or self._wal_bytes >= self.cfg.memtable_size
            ):
                self._rotate_memtable()
                self._maintenance_dirty = True
        self._maybe_poll_usage()
        if self._maintenance_dirty:
            self._kick_maintenance()

    def _maybe_poll_usage(self) -> None:
        # The throttle must observe log growth even between manifest edits.
        if self.throttle.unlimited:
            return
        budget = min(self.cfg.memtable_size, max(self.throttle.quota // 64, 64 << 10))
        if self._unpolled_bytes >= budget:
            self._unpolled_bytes = 0
            self.throttle.update_usage(self.vset.disk_usage())

    def _wait_for_flush_room(self) -> None:
        if self.cfg.background_workers == 0:
            return
        while len(self._immutables) > self.cfg.max_immutable_memtables:
            self._write_lock.release()
            try:
                time.sleep(0.001)
            finally:
                self._write_lock.acquire()

    def _rotate_memtable(self) -> None:
        if not len(self._memtable):
            return
        self._immutables.append((self._memtable, [self._wal_number]))
        self._memtable = Memtable()
        self._rotate_wal()

    def _rotate_wal(self) -> None:
        if self._wal is not None:
            self._wal.close()
        self._wal_number = self.vset.allocate_file_number()
        self._wal = WalWriter(wal_path(self.directory, self._wal_number), self.cfg.fsync)
        self._wal_bytes = 0

    # Read path ---------------------------------------------------------------

    def get(self, key: bytes) -> bytes | None:
        with self._write_lock:
            hit = self._memtable.get(key)
            if hit is None:
                for mem, _ in reversed(self._immutables):
                    hit = mem.get(key)
                    if hit is not None:
                        break
        if hit is not None:
            _, kind, value = hit
            return value if kind == PUT else None
        version = self.vset.acquire()
        try:
            entry = self._search_levels(version, key, kf_only=False)
            if entry is None or entry.kind == TOMBSTONE:
                return None
            if entry.kind == INLINE:
                return entry.value
            return self._read_value(entry.vsst, key)
        finally:
            self.vset.release(version)

    def _read_value(self, vsst: int, key: bytes) -> bytes:
        live = self.vset.registry.resolve(vsst)
        reader = self.vset.tables.value_reader(live)
        value = reader.get(key)
        if value is None:
            raise IntegrityError(
                f"reference {vsst} resolved to vSST {live} which lacks key {key!r}"
            )
        return value

    def _candidate_files(self, version, key: bytes):
        for meta in reversed(version.levels[0]):
            if meta.smallest <= key <= meta.largest:
                yield meta
        for level in range(1, len(version.levels)):
            files = version.levels[level]
            lo, hi = 0, len(files)
            while lo < hi:
                mid = (lo + hi) // 2
                if files[mid].largest < key:
                    lo = mid + 1
                else:
                    hi = mid
            if lo < len(files) and files[lo].smallest <= key:
                yield files[lo]

    def _search_levels(self, version, key: bytes, kf_only: bool) -> IndexEntry | None:
        for meta in self._candidate_files(version, key):
            reader = self.vset.tables.key_reader(meta.file_number)
            entry = reader.lookup(key, kf_only=kf_only)
            if entry is not None:
                return entry
        return None

    def _lookup_ref(self, key: bytes):
        """Reference-only point query for GC validation: newest reference
        wins; any newer in-memory version or tombstone shadows the key."""
        with self._write_lock:
            hit = self._memtable.get(key)
            if hit is None:
                for mem, _ in reversed(self._immutables):
                    hit = mem.get(key)
                    if hit is not None:
                        break
        if hit is not None:
            return ("shadowed", None)
        version = self.vset.acquire()
        try:
            entry = self._search_levels(version, key, kf_only=True)
        finally:
            self.vset.release(version)
        if entry is None:
            return ("absent", None)
        if entry.kind == REF:
            return ("ref", entry.vsst)
        return ("shadowed", None)

    def scan(self, start_key: bytes, limit: int) -> list[tuple[bytes, bytes]]:
        if limit < 0:
            raise ValueError("limit must be >= 0")
        if limit == 0:
            return []
        out: list[tuple[bytes, bytes]] = []
        version = self.vset.acquire()
        try:
            sources = []
            with self._write_lock:
                mems = [self._memtable] + [m for m, _ in self._immutables]
                for mem in mems:
                    sources.append(
                        # Normalize memtable kinds to the file-entry enum.
                        (key, -seq, TOMBSTONE if kind == DELETE else INLINE, value, None)
                        for key, seq, kind, value in mem.iter_sorted(start_key)
                    )
            for meta in version.levels[0]:
                reader = self.vset.tables.key_reader(meta.file_number)
                sources.append(
                    (e.key, -e.seq, e.kind, e.value, e.vsst)
                    for e in reader.iter_entries(start_key)
                )
            for level in range(1, len(version.levels)):
                files = [m for m in version.levels[level] if m.largest >= start_key]
                if files:
                    sources.append(self._level_iter(files, start_key))
            prev_key = None
            for key, _negseq, kind, value, vsst in heapq.merge(*sources):
                if key == prev_key:
                    continue
                prev_key = key
                if kind == TOMBSTONE:
                    continue
                if vsst is not None:
                    value = self._read_value(vsst, key)
                out.append((key, value))
                if len(out) >= limit:
                    break
            return out
        finally:
            self.vset.release(version)

    def _level_iter(self, files, start_key: bytes):
        for meta in files:
            reader = self.vset.tables.key_reader(meta.file_number)
            for e in reader.iter_entries(start_key):
                yield (e.key, -e.seq, e.kind, e.value, e.vsst)

    # Flush ---------------------------------------------------------------------

    def flush_now(self) -> None:
        """Rotate the active memtable and flush everything pending."""
        with self._write_lock:
            self._rotate_memtable()
        while True:
            with self._write_lock:
                if not self._immutables:
                    return
            self._flush_oldest()

    def _flush_oldest(self) -> None:
        with self._maintenance_lock:
            with self._write_lock:
                if not self._immutables:
                    return
                mem, wal_numbers = self._immutables[0]
            with st.component(st.FLUSH):
                self._flush_memtable(mem, wal_numbers)
            with self._write_lock:
                self._immutables.pop(0)

    def _flush_memtable(self, mem: Memtable, wal_numbers: list[int]) -> None:
        cfg = self.cfg
        vset = self.vset
        edit = VersionEdit()
        key_infos = []
        value_infos = []  # (info, temperature)
        key_builder: KeyTableBuilder | None = None
        value_builders: dict[str, ValueTableBuilder] = {}

        def new_key_builder() -> KeyTableBuilder:
            number = vset.allocate_file_number()
            return KeyTableBuilder(
                ksst_path(self.directory, number), number,
                block_size=cfg.key_block_size, bits_per_key=cfg.bloom_bits_per_key,
                split=cfg.dtable_split, fsync=cfg.fsync,
            )

        def value_builder(temp: str) -> ValueTableBuilder:
            b = value_builders.get(temp)
            if b is None or b.pending_bytes >= cfg.vsst_size:
                if b is not None:
                    value_infos.append((b.finish(), temp))
                number = vset.allocate_file_number()
                b = ValueTableBuilder(
                    vsst_path(self.directory, number), number,
                    partition_size=cfg.index_partition_size,
                    bits_per_key=cfg.bloom_bits_per_key, fsync=cfg.fsync,
                )
                value_builders[temp] = b
            return b

        try:
            for key, seq, kind, value in mem.iter_sorted():
                if kind == DELETE:
                    entry = IndexEntry(key, seq, TOMBSTONE)
                elif len(value) >= cfg.separation_threshold:
                    hot = cfg.dropcache_enabled and self.dropcache.is_hot(key)
                    vb = value_builder(HOT if hot else COLD)
                    vb.add(key, value)
                    entry = IndexEntry(key, seq, REF, vsst=vb.file_number)
                else:
                    entry = IndexEntry(key, seq, INLINE, value=value)
                if key_builder is None:
                    key_builder = new_key_builder()
                key_builder.add(entry)
                if key_builder.pending_bytes >= cfg.ksst_size:
                    key_infos.append(key_builder.finish())
                    key_builder = None
            if key_builder is not None:
                key_infos.append(key_builder.finish())
                key_builder = None
            for temp, b in list(value_builders.items()):
                value_infos.append((b.finish(), temp))
            value_builders.clear()

            for info in key_infos:
                edit.added_ksst.append(
                    {
                        "file_number": info.file_number,
                        "level": 0,
                        "smallest": info.smallest,
                        "largest": info.largest,
                        "raw_size": info.file_size,
                        "entry_count": info.entry_count,
                        "dependencies": dict(info.dependencies),
                    }
                )
            for info, temp in value_infos:
                edit.added_vsst.append(
                    {
                        "file_number": info.file_number,
                        "total_entries": info.record_count,
                        "total_value_bytes": info.value_bytes,
                        "temperature": temp,
                    }
                )
            with self._write_lock:
                remaining = [w for _, ws in self._immutables[1:] for w in ws]
                edit.log_number = min(remaining) if remaining else self._wal_number
            self._run_hook("flush:pre_commit")
            vset.apply(edit)
        except BaseException:
            if key_builder is not None:
                key_builder.abandon()
            for b in value_builders.values():
                b.abandon()
            for info in key_infos:
                self._remove_quiet(info.path)
            for info, _ in value_infos:
                self._remove_quiet(info.path)
            raise

        for number, path in iter_wal_files(self.directory):
            if number < self.vset.log_number:
                self._remove_quiet(path)

    @staticmethod
    def _remove_quiet(path: str) -> None:
        try:
            os.remove(path)
        except FileNotFoundError:
            pass

    def _run_hook(self, name: str) -> None:
        fn = self.hooks.get(name)
        if fn:
            fn()

    # Maintenance -----------------------------------------------------------------

    def _kick_maintenance(self) -> None:
        if self.cfg.background_workers == 0:
            self.drain_maintenance()
        else:
            with self._bg_cond:
                self._bg_wake = True
                self._bg_cond.notify_all()

    def _background_loop(self) -> None:
        while not self._closed:
            with self._bg_cond:
                if not self._bg_wake:
                    self._bg_cond.wait(timeout=0.05)
                self._bg_wake = False
            try:
                while self._maintenance_step():
                    pass
            except CrashPoint:
                return
            except BaseException as exc:  # surfaced to the next writer
                self._maintenance_error = exc
                return

    def _maintenance_step(self) -> bool:
        """Run one maintenance action; returns False when quiescent."""
        with self._maintenance_lock:
            with self._write_lock:
                has_imm = bool(self._immutables)
            if has_imm:
                self._flush_oldest()
                return True
            version = self.vset.current
            job = pick_compaction(version, self.vset.registry, self.cfg)
            if job is not None:
                self.compactor.run(version, job)
                return True
            candidates = pick_gc_candidates(
                self.vset.registry, self.policy, self.throttle.gc_aggressive()
            )
            if candidates:
                self.collector.run_job(candidates[:4])
                return True
            self._maintenance_dirty = False
            return False

    def drain_maintenance(self) -> None:
        progressed = False
        while self._maintenance_step():
            progressed = True
        if progressed and not self.throttle.unlimited:
            self.throttle.update_usage(self.vset.disk_usage())

    def _reclaim_step(self) -> bool:
        """Forward progress while halted: flushes, compactions, then GC.
        As a last resort rotate the live memtable so its log retires."""
        if self._maintenance_step():
            self.throttle.update_usage(self.vset.disk_usage())
            return True
        with self._write_lock:
            if len(self._memtable) and self._wal_bytes > 0:
                self._rotate_memtable()
                rotated = True
            else:
                rotated = False
        if rotated:
            self._maintenance_step()
            self.throttle.update_usage(self.vset.disk_usage())
        return rotated

    # Bookkeeping -------------------------------------------------------------------

    def _on_edit(self, edit: VersionEdit) -> None:
        self._maintenance_dirty = True
        self._poll_space()

    def _poll_space(self) -> None:
        usage = self.vset.disk_usage()
        self.throttle.update_usage(usage)
        stats = compute_space_stats(self.vset.current, self.vset.registry, self.cfg, usage)
        stats.throttle_state = self.throttle.state
        self.space_series.append((time.time(), stats))

    def space_stats(self):
        usage = self.vset.disk_usage()
        stats = compute_space_stats(self.vset.current, self.vset.registry, self.cfg, usage)
        stats.throttle_state = self.throttle.state
        return stats

    @property
    def gc_jobs(self):
        return self.collector.jobs

    def live_vsst_metas(self):
        return self.vset.registry.live_files()
