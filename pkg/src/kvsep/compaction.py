"""Compaction execution: merge key tables, emit drop events, commit the edit.

Every entry that loses to a newer version (or is a tombstone discarded at
the bottom of the tree) produces a drop event: the key feeds the
dropped-key cache, and if the loser was a value reference the referenced
record's bytes are credited as exposed garbage against the resolved live
value file.
"""

from __future__ import annotations

import heapq
import os
from dataclasses import dataclass, field

from . import stats as st
from .key_table import REF, TOMBSTONE, IndexEntry, KeyTableBuilder
from .manifest import VersionEdit
from .version import CompactionJob, Version
from .versionset import ksst_path


@dataclass
class DropEvent:
    key: bytes
    vsst: int | None  # referenced value file when the loser was a reference


@dataclass
class CompactionResult:
    edit: VersionEdit
    drops: list[DropEvent] = field(default_factory=list)
    entries_in: int = 0
    entries_out: int = 0
    outputs: list[int] = field(default_factory=list)


class CompactionRunner:
    def __init__(self, vset, cfg, dropcache=None, hooks=None):
        self.vset = vset
        self.cfg = cfg
        self.dropcache = dropcache
        self.hooks = hooks or {}

    def _hook(self, name: str) -> None:
        fn = self.hooks.get(name)
        if fn:
            fn()

    def _drops_tombstones(self, version: Version, job: CompactionJob) -> bool:
        # A tombstone can only be discarded once nothing below the output
        # level may still hold an older version of its key.
        lo, hi = job.key_range()
        for level in range(job.output_level + 1, len(version.levels)):
            if version.overlapping(level, lo, hi):
                return False
        return True

    def run(self, version: Version, job: CompactionJob) -> CompactionResult:
        with st.component(st.COMPACTION):
            return self._run(version, job)

    def _run(self, version: Version, job: CompactionJob) -> CompactionResult:
        vset = self.vset
        cfg = self.cfg
        registry = vset.registry
        drop_tombs = self._drops_tombstones(version, job)

        streams = []
        for meta in job.all_inputs():
            reader = vset.tables.key_reader(meta.file_number)
            streams.append(((e.key, -e.seq, e) for e in reader.iter_entries()))

        result = CompactionResult(edit=VersionEdit())
        drops = result.drops
        infos = []
        builder: KeyTableBuilder | None = None

        def new_builder() -> KeyTableBuilder:
            number = vset.allocate_file_number()
            return KeyTableBuilder(
                ksst_path(vset.directory, number),
                number,
                block_size=cfg.key_block_size,
                bits_per_key=cfg.bloom_bits_per_key,
                split=cfg.dtable_split,
                fsync=cfg.fsync,
            )

        try:
            prev_key = None
            for key, _negseq, entry in heapq.merge(*streams):
                result.entries_in += 1
                if key == prev_key:
                    # Older version shadowed by the one already written.
                    drops.append(DropEvent(key, entry.vsst if entry.kind == REF else None))
                    continue
                prev_key = key
                if entry.kind == TOMBSTONE and drop_tombs:
                    drops.append(DropEvent(key, None))
                    continue
                if entry.kind == REF:
                    # Retarget to the live number so stale inheritance arcs
                    # can be pruned once no entry names them.
                    live = registry.resolve(entry.vsst)
                    if live != entry.vsst:
                        entry = IndexEntry(entry.key, entry.seq, REF, vsst=live)
                if builder is None:
                    builder = new_builder()
                builder.add(entry)
                result.entries_out += 1
                if builder.pending_bytes >= cfg.ksst_size:
                    infos.append(builder.finish())
                    builder = None
            if builder is not None:
                infos.append(builder.finish())
                builder = None

            edit = result.edit
            for info in infos:
                edit.added_ksst.append(
                    {
                        "file_number": info.file_number,
                        "level": job.output_level,
                        "smallest": info.smallest,
                        "largest": info.largest,
                        "raw_size": info.file_size,
                        "entry_count": info.entry_count,
                        "dependencies": dict(info.dependencies),
                    }
                )
                result.outputs.append(info.file_number)
            for meta in job.inputs:
                edit.removed_ksst.append((job.level, meta.file_number))
            for meta in job.next_inputs:
                edit.removed_ksst.append((job.output_level, meta.file_number))
            edit.garbage = self._garbage_credits(drops)

            self._hook("compaction:pre_commit")
            vset.apply(edit)
        except BaseException:
            # Failure leaves the version untouched; scrap any outputs.
            if builder is not None:
                builder.abandon()
            for info in infos:
                try:
                    os.remove(info.path)
                except FileNotFoundError:
                    pass
            raise

        if self.dropcache is not None:
            for d in drops:
                self.dropcache.note_dropped(d.key)
        return result

    def _garbage_credits(self, drops: list[DropEvent]) -> list[tuple[int, int, int]]:
        """Aggregate per-live-file byte credits for dropped references.

        The dropped record's size comes from the resolved live file's dense
        index; a key absent there was already collected, leaving nothing to
        credit.
        """
        registry = self.vset.registry
        credits: dict[int, list[int]] = {}
        for d in drops:
            if d.vsst is None:
                continue
            live = registry.resolve(d.vsst)
            meta = registry.get(live)
            if meta is None or meta.state != "live":
                continue  # record's file already collected away
            reader = self.vset.tables.value_reader(live)
            rec = reader.lookup_index(d.key)
            if rec is None:
                continue
            acc = credits.setdefault(live, [0, 0])
            acc[0] += rec.size
            acc[1] += 1
        return [(vsst, b, e) for vsst, (b, e) in sorted(credits.items())]
