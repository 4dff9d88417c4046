"""Key tables: sorted index files with reference/record block segregation.

Entries are either references (key -> value-file number), inline records
(key -> small value), or tombstones. References and tombstones are written
to one run of blocks, inline records to an independent run, each with its
own block index, so a reference-only lookup never touches a block holding
value bytes. A shared Bloom filter covers every user key.

With ``split=False`` the builder degrades to the conventional mixed
layout: one run of blocks holding all entries, tagged as inline-record
blocks. Readers handle both shapes; an all-inline or all-reference input
produces the conventional single-run file either way.

Layout, front to back: data blocks (reference run then inline run), the
two block indexes, filter, meta, fixed 80-byte footer.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterator

from .bloom import BloomFilter, hash_key
from .encoding import U8, U32, U64, Cursor, crc32, pack_bytes, seal, unseal
from .errors import FormatError
from . import blocks
from .blocks import BlockHandle, TableFile

MAGIC = 0x31306C62746B  # "ktbl01"
FORMAT_VERSION = 1
FOOTER_SIZE = 80

REF = 0
INLINE = 1
TOMBSTONE = 2


@dataclass(frozen=True)
class IndexEntry:
    """One versioned key entry; kind decides the payload."""

    key: bytes
    seq: int
    kind: int
    vsst: int | None = None  # REF only
    value: bytes | None = None  # INLINE only

    def encode(self) -> bytes:
        head = pack_bytes(self.key) + U64.pack(self.seq) + U8.pack(self.kind)
        if self.kind == REF:
            return head + U64.pack(self.vsst)
        if self.kind == INLINE:
            return head + pack_bytes(self.value)
        return head


def decode_entry(cur: Cursor) -> IndexEntry:
    key = cur.bytes_()
    seq = cur.u64()
    kind = cur.u8()
    if kind == REF:
        return IndexEntry(key, seq, REF, vsst=cur.u64())
    if kind == INLINE:
        return IndexEntry(key, seq, INLINE, value=cur.bytes_())
    if kind == TOMBSTONE:
        return IndexEntry(key, seq, TOMBSTONE)
    raise ValueError(f"unknown entry kind {kind}")


@dataclass
class KeyTableInfo:
    file_number: int
    path: str
    file_size: int = 0
    entry_count: int = 0
    ref_count: int = 0
    inline_count: int = 0
    tombstone_count: int = 0
    inline_value_bytes: int = 0
    dependencies: dict[int, int] = None  # vsst file number -> referencing entries
    smallest: bytes = b""
    largest: bytes = b""
    split: bool = True

    def __post_init__(self):
        if self.dependencies is None:
            self.dependencies = {}


class _BlockRun:
    """Accumulates entries into sealed blocks plus a (last key, handle) index."""

    def __init__(self, f, kind: str, block_size: int):
        self.f = f
        self.kind = kind
        self.block_size = block_size
        self.index: list[tuple[bytes, int, int]] = []
        self._buf: list[bytes] = []
        self._bytes = 0
        self._count = 0
        self._last = b""

    def add(self, entry: IndexEntry, offset: int) -> int:
        enc = entry.encode()
        self._buf.append(enc)
        self._bytes += len(enc)
        self._count += 1
        self._last = entry.key
        if self._bytes >= self.block_size:
            return self.cut(offset)
        return offset

    def cut(self, offset: int) -> int:
        if not self._count:
            return offset
        region = seal(U32.pack(self._count) + b"".join(self._buf))
        self.f.write(region)
        self.index.append((self._last, offset, len(region)))
        self._buf, self._bytes, self._count = [], 0, 0
        return offset + len(region)


class KeyTableBuilder:
    """Single-writer builder; entries must arrive sorted by (key, seq desc)."""

    def __init__(
        self,
        path: str,
        file_number: int,
        block_size: int = 4096,
        bits_per_key: int = 10,
        split: bool = True,
        fsync: bool = False,
    ):
        self.path = path
        self.info = KeyTableInfo(file_number, path, split=split)
        self.split = split
        self.fsync = fsync
        self._f = open(path, "wb")
        self._offset = 0
        self._keys: list[bytes] = []
        self._last: tuple[bytes, int] | None = None
        self._ref_run = _BlockRun(self._f, blocks.KF_DATA if split else blocks.KV_DATA, block_size)
        self._kv_run = _BlockRun(self._f, blocks.KV_DATA, block_size)
        # Without splitting everything funnels through one mixed run.
        if not split:
            self._kv_run = self._ref_run

    def add(self, entry: IndexEntry) -> None:
        order = (entry.key, -entry.seq)
        if self._last is not None and order <= self._last:
            self.abandon()
            raise ValueError(f"entries out of order at {entry.key!r}")
        self._last = order
        info = self.info
        info.entry_count += 1
        self._keys.append(entry.key)
        if entry.kind == REF:
            info.ref_count += 1
            info.dependencies[entry.vsst] = info.dependencies.get(entry.vsst, 0) + 1
            run = self._ref_run
        elif entry.kind == TOMBSTONE:
            info.tombstone_count += 1
            run = self._ref_run  # tombstones carry no value; keep them reference-side
        else:
            info.inline_count += 1
            info.inline_value_bytes += len(entry.value)
            run = self._kv_run
        # Runs buffer independently and share the file offset cursor; a
        # run's blocks need not be contiguous, only cut in key order.
        self._offset = run.add(entry, self._offset)

    @property
    def pending_bytes(self) -> int:
        return self._offset + self._ref_run._bytes + (
            self._kv_run._bytes if self._kv_run is not self._ref_run else 0
        )

    def finish(self) -> KeyTableInfo:
        info = self.info
        if not info.entry_count:
            self.abandon()
            raise ValueError("key table must hold at least one entry")
        self._offset = self._ref_run.cut(self._offset)
        if self._kv_run is not self._ref_run:
            self._offset = self._kv_run.cut(self._offset)

        def write_index(run: _BlockRun) -> BlockHandle:
            payload = U32.pack(len(run.index)) + b"".join(
                pack_bytes(k) + U64.pack(o) + U64.pack(s) for k, o, s in run.index
            )
            region = seal(payload)
            handle = BlockHandle(self._offset, len(region), blocks.KF_INDEX)
            self._f.write(region)
            self._offset += len(region)
            return handle

        ref_index = write_index(self._ref_run)
        kv_index = write_index(self._kv_run) if self._kv_run is not self._ref_run else ref_index

        filt = BloomFilter.build(self._keys)
        filt_region = seal(filt.to_bytes())
        filt_handle = BlockHandle(self._offset, len(filt_region), blocks.FILTER)
        self._f.write(filt_region)
        self._offset += len(filt_region)

        info.smallest = self._keys[0]
        info.largest = self._keys[-1]
        deps = sorted(info.dependencies.items())
        meta_payload = (
            U64.pack(info.entry_count)
            + U64.pack(info.ref_count)
            + U64.pack(info.inline_count)
            + U64.pack(info.tombstone_count)
            + U64.pack(info.inline_value_bytes)
            + U8.pack(1 if self.split else 0)
            + U32.pack(len(deps))
            + b"".join(U64.pack(v) + U64.pack(c) for v, c in deps)
            + pack_bytes(info.smallest)
            + pack_bytes(info.largest)
        )
        meta_region = seal(meta_payload)
        meta_handle = BlockHandle(self._offset, len(meta_region), blocks.META)
        self._f.write(meta_region)
        self._offset += len(meta_region)

        footer = (
            ref_index.encode()
            + kv_index.encode()
            + filt_handle.encode()
            + meta_handle.encode()
            + U32.pack(FORMAT_VERSION)
        )
        footer += U32.pack(crc32(footer))
        footer += U64.pack(MAGIC)
        assert len(footer) == FOOTER_SIZE
        self._f.write(footer)
        self._offset += FOOTER_SIZE

        self._f.flush()
        if self.fsync:
            os.fsync(self._f.fileno())
        self._f.close()
        info.file_size = self._offset
        return info

    def abandon(self) -> None:
        try:
            self._f.close()
        finally:
            if os.path.exists(self.path):
                os.remove(self.path)


class KeyTableReader:
    """Immutable reader over one key table."""

    def __init__(self, path: str, file_number: int, cache=None, stats=None):
        self.path = path
        self.file_number = file_number
        self.cache = cache
        self.stats = stats
        self._file = TableFile(path, stats)
        (
            self._ref_index_handle,
            self._kv_index_handle,
            self._filter_handle,
            self._meta_handle,
        ) = self._read_footer()
        self._split_file = (self._ref_index_handle.offset, self._ref_index_handle.size) != (
            self._kv_index_handle.offset,
            self._kv_index_handle.size,
        )
        self._ref_index = None
        self._kv_index = None
        self._filter = None
        self._meta = None

    def _read_footer(self):
        if self._file.size < FOOTER_SIZE:
            raise FormatError(self.path, blocks.FOOTER, "file shorter than footer")
        raw = self._file.read(
            BlockHandle(self._file.size - FOOTER_SIZE, FOOTER_SIZE, blocks.FOOTER)
        )
        (magic,) = U64.unpack_from(raw, FOOTER_SIZE - 8)
        if magic != MAGIC:
            raise FormatError(self.path, blocks.FOOTER, "bad magic")
        body, tail = raw[:68], raw[68:72]
        (want,) = U32.unpack(tail)
        if crc32(body) != want:
            raise FormatError(self.path, blocks.FOOTER, "crc mismatch")
        (version,) = U32.unpack_from(body, 64)
        if version != FORMAT_VERSION:
            raise FormatError(self.path, blocks.FOOTER, f"version {version}")
        return (
            blocks.decode_handle(body, 0, blocks.KF_INDEX),
            blocks.decode_handle(body, 16, blocks.KV_INDEX),
            blocks.decode_handle(body, 32, blocks.FILTER),
            blocks.decode_handle(body, 48, blocks.META),
        )

    def _load_index(self, handle: BlockHandle) -> list[tuple[bytes, int, int]]:
        payload = unseal(self._file.read(handle), self.path, "block index")
        cur = Cursor(payload)
        n = cur.u32()
        out = []
        for _ in range(n):
            key = cur.bytes_()
            off = cur.u64()
            size = cur.u64()
            out.append((key, off, size))
        return out

    def ref_index(self):
        if self._ref_index is None:
            self._ref_index = self._load_index(self._ref_index_handle)
        return self._ref_index

    def kv_index(self):
        if not self._split_file:
            return self.ref_index()
        if self._kv_index is None:
            self._kv_index = self._load_index(self._kv_index_handle)
        return self._kv_index

    def filter(self) -> BloomFilter:
        if self._filter is None:
            payload = unseal(self._file.read(self._filter_handle), self.path, "filter")
            self._filter = BloomFilter.from_bytes(payload)
        return self._filter

    def meta(self) -> dict:
        if self._meta is None:
            payload = unseal(self._file.read(self._meta_handle), self.path, "meta")
            cur = Cursor(payload)
            meta = {
                "entry_count": cur.u64(),
                "ref_count": cur.u64(),
                "inline_count": cur.u64(),
                "tombstone_count": cur.u64(),
                "inline_value_bytes": cur.u64(),
                "split": bool(cur.u8()),
            }
            ndeps = cur.u32()
            deps = {}
            for _ in range(ndeps):
                v = cur.u64()
                deps[v] = cur.u64()
            meta["dependencies"] = deps
            meta["smallest"] = cur.bytes_()
            meta["largest"] = cur.bytes_()
            self._meta = meta
        return self._meta

    def _load_block(self, off: int, size: int, kind: str) -> list[IndexEntry]:
        handle = BlockHandle(off, size, kind)

        def load():
            payload = unseal(self._file.read(handle), self.path, "data block")
            cur = Cursor(payload)
            n = cur.u32()
            return [decode_entry(cur) for _ in range(n)], size

        priority = "high" if kind == blocks.KF_DATA else "low"
        if self.cache is not None:
            return self.cache.get_or_load((self.file_number, off), kind, priority, load)
        if self.stats is not None:
            self.stats.note_block_access(kind)
        return load()[0]

    def _search_run(self, index, key: bytes, kind: str) -> IndexEntry | None:
        lo, hi = 0, len(index)
        while lo < hi:
            mid = (lo + hi) // 2
            if index[mid][0] < key:
                lo = mid + 1
            else:
                hi = mid
        if lo == len(index):
            return None
        _, off, size = index[lo]
        entries = self._load_block(off, size, kind)
        blo, bhi = 0, len(entries)
        while blo < bhi:
            mid = (blo + bhi) // 2
            if entries[mid].key < key:
                blo = mid + 1
            else:
                bhi = mid
        if blo < len(entries) and entries[blo].key == key:
            return entries[blo]  # newest version: entries sorted (key, seq desc)
        return None

    def lookup(self, key: bytes, kf_only: bool = False) -> IndexEntry | None:
        """Point lookup. kf_only consults reference-side blocks only, so an
        inline key reads as absent and no inline-record block is touched."""
        if not self.filter().contains_hash(hash_key(key)):
            return None
        ref_kind = blocks.KF_DATA if self._split_file else blocks.KV_DATA
        found = self._search_run(self.ref_index(), key, ref_kind)
        if found is not None:
            if kf_only and found.kind == INLINE:
                # Only possible in mixed-layout files.
                return None
            return found
        if kf_only or not self._split_file:
            return None
        return self._search_run(self.kv_index(), key, blocks.KV_DATA)

    def _iter_run(self, index, kind: str, start: bytes | None) -> Iterator[IndexEntry]:
        lo = 0
        if start is not None:
            hi = len(index)
            while lo < hi:
                mid = (lo + hi) // 2
                if index[mid][0] < start:
                    lo = mid + 1
                else:
                    hi = mid
        for _, off, size in index[lo:]:
            for entry in self._load_block(off, size, kind):
                if start is None or entry.key >= start:
                    yield entry

    def iter_entries(self, start: bytes | None = None) -> Iterator[IndexEntry]:
        """Merged iteration over both runs in (key, seq desc) order."""
        ref_kind = blocks.KF_DATA if self._split_file else blocks.KV_DATA
        a = self._iter_run(self.ref_index(), ref_kind, start)
        if not self._split_file:
            yield from a
            return
        b = self._iter_run(self.kv_index(), blocks.KV_DATA, start)
        ea = next(a, None)
        eb = next(b, None)
        while ea is not None or eb is not None:
            if eb is None or (ea is not None and (ea.key, -ea.seq) <= (eb.key, -eb.seq)):
                yield ea
                ea = next(a, None)
            else:
                yield eb
                eb = next(b, None)

    def close(self) -> None:
        self._file.close()
