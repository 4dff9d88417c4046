"""Garbage collection: lazy read, reference-only validation, hot/cold rewrite.

A job processes value files whose exposed-garbage ratio crossed the
threshold. Per file: (Read) fetch the dense index, never the records;
(GC-Lookup) classify every key through the reference-only read path;
(Write) fetch only the surviving records and rewrite them, installing a
number-inheritance arc from the old file to its single successor.

Survivors of one input land in exactly one output per job, so the
inheritance map stays one-to-one. When hotness votes split across the
dropped-key cache, the majority temperature wins for the whole file.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

from . import stats as st
from .manifest import VersionEdit
from .value_table import FOOTER_SIZE, ValueTableBuilder, decode_record
from .valuestore import COLD, HOT, VsstMeta
from .versionset import vsst_path

LIVE = "live"
GARBAGE = "garbage"


@dataclass
class GcPolicy:
    garbage_threshold: float = 0.2
    aggressive_threshold: float = 0.05
    max_concurrent_jobs: int = 1

    def __post_init__(self):
        if not 0 < self.aggressive_threshold <= self.garbage_threshold < 1:
            raise ValueError("need 0 < aggressive_threshold <= garbage_threshold < 1")

    def effective_threshold(self, aggressive: bool) -> float:
        return self.aggressive_threshold if aggressive else self.garbage_threshold


def pick_gc_candidates(registry, policy: GcPolicy, aggressive: bool = False) -> list[VsstMeta]:
    """Live files at/over the effective threshold, dirtiest first, older
    file numbers breaking ties."""
    threshold = policy.effective_threshold(aggressive)
    out = [m for m in registry.live_files() if m.garbage_ratio() >= threshold]
    out.sort(key=lambda m: (-m.garbage_ratio(), m.file_number))
    return out


@dataclass
class GcJobStats:
    job_id: int = 0
    input_files: list[int] = field(default_factory=list)
    output_files: list[int] = field(default_factory=list)
    read_seconds: float = 0.0
    lookup_seconds: float = 0.0
    write_seconds: float = 0.0
    index_bytes_read: int = 0
    value_bytes_read: int = 0
    bytes_written: int = 0
    input_value_bytes: int = 0
    survivor_entries: int = 0
    garbage_entries: int = 0
    survivor_bytes: int = 0
    temperature_overrides: int = 0

    CSV_FIELDS = (
        "job_id", "input_files", "output_files", "read_seconds", "lookup_seconds",
        "write_seconds", "index_bytes_read", "value_bytes_read", "bytes_written",
        "input_value_bytes", "survivor_entries", "garbage_entries", "survivor_bytes",
        "survivor_ratio", "temperature_overrides",
    )

    @property
    def total_seconds(self) -> float:
        return self.read_seconds + self.lookup_seconds + self.write_seconds

    @property
    def survivor_ratio(self) -> float:
        n = self.survivor_entries + self.garbage_entries
        return self.survivor_entries / n if n else 0.0

    def csv_row(self) -> list:
        return [
            self.job_id,
            " ".join(map(str, self.input_files)),
            " ".join(map(str, self.output_files)),
            f"{self.read_seconds:.6f}", f"{self.lookup_seconds:.6f}",
            f"{self.write_seconds:.6f}",
            self.index_bytes_read, self.value_bytes_read, self.bytes_written,
            self.input_value_bytes, self.survivor_entries, self.garbage_entries,
            self.survivor_bytes, f"{self.survivor_ratio:.4f}", self.temperature_overrides,
        ]


def gc_latency_report(jobs: list[GcJobStats]) -> dict:
    """Per-step shares of total wall time plus per-entry averages."""
    if not jobs:
        raise ValueError("no completed jobs to report")
    read = sum(j.read_seconds for j in jobs)
    lookup = sum(j.lookup_seconds for j in jobs)
    write = sum(j.write_seconds for j in jobs)
    total = read + lookup + write
    if total <= 0:
        raise ValueError("zero-duration jobs cannot be broken down")
    entries = sum(j.survivor_entries + j.garbage_entries for j in jobs) or 1
    survivors = sum(j.survivor_entries for j in jobs) or 1
    return {
        "jobs": len(jobs),
        "read_share": read / total,
        "gc_lookup_share": lookup / total,
        "write_share": write / total,
        "avg_read_us": 1e6 * read / entries,
        "avg_gc_lookup_us": 1e6 * lookup / entries,
        "avg_write_us": 1e6 * write / survivors,
    }


class GarbageCollector:
    """Executes jobs against the engine's read path and version set.

    ``lookup_ref`` is the reference-only point query: it returns
    ("ref", file_number) for the newest reference entry, ("shadowed", None)
    when a newer non-reference version exists in memory or a tombstone
    shadows the key, or ("absent", None).
    """

    def __init__(self, vset, cfg, policy: GcPolicy, dropcache, lookup_ref, hooks=None):
        self.vset = vset
        self.cfg = cfg
        self.policy = policy
        self.dropcache = dropcache
        self.lookup_ref = lookup_ref
        self.hooks = hooks or {}
        self._job_counter = 0
        self.jobs: list[GcJobStats] = []

    def _hook(self, name: str) -> None:
        fn = self.hooks.get(name)
        if fn:
            fn()

    def classify(self, key: bytes, claimed_file_number: int) -> str:
        """Live iff the newest reference for the key resolves to the same
        live file as the one under collection."""
        claimed_live = self.vset.registry.resolve(claimed_file_number)
        status, ref = self.lookup_ref(key)
        if status != "ref":
            return GARBAGE
        return LIVE if self.vset.registry.resolve(ref) == claimed_live else GARBAGE

    def run_job(self, inputs: list[VsstMeta]) -> GcJobStats:
        with st.component(st.GC):
            return self._run_job(inputs)

    def _run_job(self, inputs: list[VsstMeta]) -> GcJobStats:
        vset = self.vset
        cfg = self.cfg
        self._job_counter += 1
        job = GcJobStats(job_id=self._job_counter, input_files=[m.file_number for m in inputs])

        edit = VersionEdit()
        finished: list = []  # (info, temperature)
        open_builders: dict[str, ValueTableBuilder] = {}
        open_last_key: dict[str, bytes] = {}

        def roll(temp: str) -> None:
            b = open_builders.pop(temp, None)
            if b is not None:
                finished.append((b.finish(), temp))
                open_last_key.pop(temp, None)

        try:
            for meta in inputs:
                reader = vset.tables.value_reader(meta.file_number)
                job.input_value_bytes += reader.meta()["value_bytes"]

                t0 = time.perf_counter()
                entries = reader.index_entries()
                job.index_bytes_read += (
                    FOOTER_SIZE
                    + reader._dir_handle.size
                    + sum(h.size for _, h in reader.directory())
                )
                job.read_seconds += time.perf_counter() - t0

                t0 = time.perf_counter()
                survivors = []
                hot_votes = 0
                for rec in entries:
                    if self.classify(rec.key, meta.file_number) == LIVE:
                        survivors.append(rec)
                        if cfg.dropcache_enabled and self.dropcache.is_hot(rec.key):
                            hot_votes += 1
                    else:
                        job.garbage_entries += 1
                job.lookup_seconds += time.perf_counter() - t0

                if not survivors:
                    edit.retired_vsst.append(meta.file_number)
                    edit.removed_vsst.append(meta.file_number)
                    continue

                values = self._fetch_survivors(reader, survivors, job)

                t0 = time.perf_counter()
                if cfg.dropcache_enabled:
                    temp = HOT if hot_votes * 2 >= len(survivors) else COLD
                    if 0 < hot_votes < len(survivors):
                        job.temperature_overrides += 1
                else:
                    temp = COLD
                builder = open_builders.get(temp)
                # One successor per input: roll only between inputs, and
                # also when appending would break the output's key order.
                if builder is not None and (
                    builder.pending_bytes >= cfg.vsst_size
                    or open_last_key[temp] >= survivors[0].key
                ):
                    roll(temp)
                    builder = None
                if builder is None:
                    number = vset.allocate_file_number()
                    builder = ValueTableBuilder(
                        vsst_path(vset.directory, number),
                        number,
                        partition_size=cfg.index_partition_size,
                        bits_per_key=cfg.bloom_bits_per_key,
                        fsync=cfg.fsync,
                    )
                    open_builders[temp] = builder
                for rec, value in zip(survivors, values):
                    builder.add(rec.key, value)
                    job.survivor_entries += 1
                    job.survivor_bytes += rec.size
                open_last_key[temp] = survivors[-1].key
                edit.inherit.append((meta.file_number, builder.file_number))
                edit.removed_vsst.append(meta.file_number)
                job.write_seconds += time.perf_counter() - t0

            t0 = time.perf_counter()
            for temp in list(open_builders):
                roll(temp)
            for info, temp in finished:
                edit.added_vsst.append(
                    {
                        "file_number": info.file_number,
                        "total_entries": info.record_count,
                        "total_value_bytes": info.value_bytes,
                        "temperature": temp,
                    }
                )
                job.output_files.append(info.file_number)
                job.bytes_written += info.file_size
            job.write_seconds += time.perf_counter() - t0

            self._hook("gc:pre_commit")
            vset.apply(edit)
        except BaseException:
            for b in open_builders.values():
                b.abandon()
            for info, _ in finished:
                try:
                    os.remove(info.path)
                except FileNotFoundError:
                    pass
            raise

        self.jobs.append(job)
        return job

    def _fetch_survivors(self, reader, survivors, job: GcJobStats) -> list[bytes]:
        """Read survivor values, honoring the lazy/readahead mode.

        Lazy mode reads each survivor record exactly once by (offset,
        size). Readahead coalesces near-adjacent survivors into spans.
        With lazy read disabled the whole record region is fetched up
        front, baseline-style.
        """
        cfg = self.cfg
        t0 = time.perf_counter()
        values: list[bytes] = []
        if not cfg.gc_lazy_read:
            region_size = reader.meta()["record_bytes"]
            span = reader.read_span(0, region_size)
            job.value_bytes_read += region_size
            for rec in survivors:
                _, v = decode_record(span[rec.offset : rec.offset + rec.size], reader.path)
                values.append(v)
        elif cfg.gc_readahead:
            spans: list[list] = []
            for rec in survivors:
                if spans and rec.offset - (spans[-1][0] + spans[-1][1]) <= cfg.gc_readahead_gap:
                    spans[-1][1] = rec.offset + rec.size - spans[-1][0]
                    spans[-1][2].append(rec)
                else:
                    spans.append([rec.offset, rec.size, [rec]])
            for off, size, recs in spans:
                data = reader.read_span(off, size)
                job.value_bytes_read += size
                for rec in recs:
                    _, v = decode_record(data[rec.offset - off : rec.offset - off + rec.size], reader.path)
                    values.append(v)
        else:
            for rec in survivors:
                _, v = reader.read_record(rec.offset, rec.size)
                values.append(v)
                job.value_bytes_read += rec.size
        job.read_seconds += time.perf_counter() - t0
        return values
