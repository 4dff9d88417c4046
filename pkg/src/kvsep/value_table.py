"""Value tables: sorted record files with a dense per-record index.

Layout, front to back:

    records    key_len u32 | val_len u32 | key | value         (per record)
    index      partitions of (key, record offset, record size), each sealed
    directory  (last key, handle) per partition, sealed
    filter     Bloom over record keys, sealed
    meta       counts and byte totals, sealed
    footer     fixed 64 bytes: directory/filter/meta handles, version,
               crc, magic

The index holds one entry per record, so garbage collection can learn
every contained key by reading only the index partitions; record bytes
are fetched individually by (offset, size) once proven live. Records are
self-describing so the file can be recovered without its index.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .bloom import BloomFilter, hash_key
from .encoding import U32, U64, Cursor, crc32, pack_bytes, seal, unseal
from .errors import FormatError
from . import blocks
from .blocks import BlockHandle, TableFile

MAGIC = 0x31306C62747376  # "vstbl01" packed little-endian, low 7 bytes
FORMAT_VERSION = 1
FOOTER_SIZE = 64

RECORD_HEADER = 8  # two u32 lengths


def record_size(key: bytes, value: bytes) -> int:
    return RECORD_HEADER + len(key) + len(value)


@dataclass
class ValueTableInfo:
    """Builder-reported metadata, kept in the file's meta region."""

    file_number: int
    path: str
    record_count: int = 0
    value_bytes: int = 0  # value payload only
    record_bytes: int = 0  # records region size
    index_bytes: int = 0  # all index partitions
    directory_bytes: int = 0
    filter_bytes: int = 0
    meta_bytes: int = 0
    footer_bytes: int = FOOTER_SIZE
    file_size: int = 0
    smallest: bytes = b""
    largest: bytes = b""


@dataclass
class IndexRecord:
    key: bytes
    offset: int
    size: int


class ValueTableBuilder:
    """Single-writer builder; records must arrive in strictly increasing key order."""

    def __init__(
        self,
        path: str,
        file_number: int,
        partition_size: int = 4096,
        bits_per_key: int = 10,
        fsync: bool = False,
    ):
        self.path = path
        self.info = ValueTableInfo(file_number, path)
        self.partition_size = partition_size
        self.bits_per_key = bits_per_key
        self.fsync = fsync
        self._f = open(path, "wb")
        self._offset = 0
        self._index: list[tuple[bytes, int, int]] = []
        self._last_key: bytes | None = None

    def add(self, key: bytes, value: bytes) -> None:
        if self._last_key is not None and key <= self._last_key:
            self.abandon()
            raise ValueError(f"keys out of order: {key!r} after {self._last_key!r}")
        self._last_key = key
        rec = U32.pack(len(key)) + U32.pack(len(value)) + key + value
        self._f.write(rec)
        self._index.append((key, self._offset, len(rec)))
        self._offset += len(rec)
        self.info.record_count += 1
        self.info.value_bytes += len(value)

    @property
    def file_number(self) -> int:
        return self.info.file_number

    @property
    def pending_bytes(self) -> int:
        return self._offset

    def finish(self) -> ValueTableInfo:
        if not self._index:
            self.abandon()
            raise ValueError("value table must hold at least one record")
        info = self.info
        info.record_bytes = self._offset
        info.smallest = self._index[0][0]
        info.largest = self._index[-1][0]

        # Cut the dense index into partitions of roughly partition_size bytes.
        directory: list[tuple[bytes, int, int]] = []
        part: list[bytes] = []
        part_bytes = 0
        part_count = 0
        part_last = b""

        def flush_partition():
            nonlocal part, part_bytes, part_count, part_last
            payload = U32.pack(part_count) + b"".join(part)
            region = seal(payload)
            directory.append((part_last, self._offset, len(region)))
            self._f.write(region)
            self._offset += len(region)
            info.index_bytes += len(region)
            part, part_bytes, part_count = [], 0, 0

        for key, off, size in self._index:
            entry = pack_bytes(key) + U64.pack(off) + U64.pack(size)
            part.append(entry)
            part_bytes += len(entry)
            part_count += 1
            part_last = key
            if part_bytes >= self.partition_size:
                flush_partition()
        if part_count:
            flush_partition()

        dir_payload = U32.pack(len(directory)) + b"".join(
            pack_bytes(k) + U64.pack(o) + U64.pack(s) for k, o, s in directory
        )
        dir_region = seal(dir_payload)
        dir_handle = BlockHandle(self._offset, len(dir_region), blocks.VALUE_DIR)
        self._f.write(dir_region)
        self._offset += len(dir_region)
        info.directory_bytes = len(dir_region)

        filt = BloomFilter.build((k for k, _, _ in self._index), self.bits_per_key)
        filt_region = seal(filt.to_bytes())
        filt_handle = BlockHandle(self._offset, len(filt_region), blocks.FILTER)
        self._f.write(filt_region)
        self._offset += len(filt_region)
        info.filter_bytes = len(filt_region)

        meta_payload = (
            U64.pack(info.record_count)
            + U64.pack(info.value_bytes)
            + U64.pack(info.record_bytes)
            + U64.pack(info.index_bytes)
            + U64.pack(info.directory_bytes)
            + pack_bytes(info.smallest)
            + pack_bytes(info.largest)
        )
        meta_region = seal(meta_payload)
        meta_handle = BlockHandle(self._offset, len(meta_region), blocks.META)
        self._f.write(meta_region)
        self._offset += len(meta_region)
        info.meta_bytes = len(meta_region)

        footer = (
            dir_handle.encode()
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


class ValueTableReader:
    """Immutable reader; footer is read eagerly, everything else on demand."""

    def __init__(self, path: str, file_number: int, cache=None, stats=None):
        self.path = path
        self.file_number = file_number
        self.cache = cache
        self.stats = stats
        self._file = TableFile(path, stats)
        self._dir_handle, self._filter_handle, self._meta_handle = self._read_footer()
        self._directory: list[tuple[bytes, BlockHandle]] | None = None
        self._filter: BloomFilter | None = None
        self._meta: dict | None = None

    def _read_footer(self):
        if self._file.size < FOOTER_SIZE:
            raise FormatError(self.path, blocks.FOOTER, "file shorter than footer")
        raw = self._file.read(
            BlockHandle(self._file.size - FOOTER_SIZE, FOOTER_SIZE, blocks.FOOTER)
        )
        (magic,) = U64.unpack_from(raw, FOOTER_SIZE - 8)
        if magic != MAGIC:
            raise FormatError(self.path, blocks.FOOTER, "bad magic")
        body, tail = raw[:52], raw[52:56]
        (want,) = U32.unpack(tail)
        if crc32(body) != want:
            raise FormatError(self.path, blocks.FOOTER, "crc mismatch")
        (version,) = U32.unpack_from(body, 48)
        if version != FORMAT_VERSION:
            raise FormatError(self.path, blocks.FOOTER, f"version {version}")
        return (
            blocks.decode_handle(body, 0, blocks.VALUE_DIR),
            blocks.decode_handle(body, 16, blocks.FILTER),
            blocks.decode_handle(body, 32, blocks.META),
        )

    # Region loaders ----------------------------------------------------

    def directory(self) -> list[tuple[bytes, BlockHandle]]:
        if self._directory is None:
            payload = unseal(self._file.read(self._dir_handle), self.path, "directory")
            cur = Cursor(payload)
            n = cur.u32()
            out = []
            for _ in range(n):
                key = cur.bytes_()
                off = cur.u64()
                size = cur.u64()
                out.append((key, BlockHandle(off, size, blocks.VALUE_INDEX)))
            self._directory = out
        return self._directory

    def filter(self) -> BloomFilter:
        if self._filter is None:
            payload = unseal(self._file.read(self._filter_handle), self.path, "filter")
            self._filter = BloomFilter.from_bytes(payload)
        return self._filter

    def meta(self) -> dict:
        if self._meta is None:
            payload = unseal(self._file.read(self._meta_handle), self.path, "meta")
            cur = Cursor(payload)
            self._meta = {
                "record_count": cur.u64(),
                "value_bytes": cur.u64(),
                "record_bytes": cur.u64(),
                "index_bytes": cur.u64(),
                "directory_bytes": cur.u64(),
                "smallest": cur.bytes_(),
                "largest": cur.bytes_(),
            }
        return self._meta

    def _load_partition(self, handle: BlockHandle) -> list[IndexRecord]:
        def load():
            payload = unseal(self._file.read(handle), self.path, "index partition")
            cur = Cursor(payload)
            n = cur.u32()
            out = []
            for _ in range(n):
                key = cur.bytes_()
                off = cur.u64()
                size = cur.u64()
                out.append(IndexRecord(key, off, size))
            return out, handle.size

        if self.cache is not None:
            return self.cache.get_or_load(
                (self.file_number, handle.offset), blocks.VALUE_INDEX, "high", load
            )
        if self.stats is not None:
            self.stats.note_block_access(blocks.VALUE_INDEX)
        return load()[0]

    # Public operations -------------------------------------------------

    def index_entries(self) -> list[IndexRecord]:
        """All dense index entries in key order; touches no record bytes."""
        out: list[IndexRecord] = []
        for _, handle in self.directory():
            out.extend(self._load_partition(handle))
        return out

    def lookup_index(self, key: bytes) -> IndexRecord | None:
        """Dense-index entry for key via one partition read, or None."""
        directory = self.directory()
        lo, hi = 0, len(directory)
        while lo < hi:  # first partition whose last key >= key
            mid = (lo + hi) // 2
            if directory[mid][0] < key:
                lo = mid + 1
            else:
                hi = mid
        if lo == len(directory):
            return None
        part = self._load_partition(directory[lo][1])
        plo, phi = 0, len(part)
        while plo < phi:
            mid = (plo + phi) // 2
            if part[mid].key < key:
                plo = mid + 1
            else:
                phi = mid
        if plo < len(part) and part[plo].key == key:
            return part[plo]
        return None

    def read_record(self, offset: int, size: int) -> tuple[bytes, bytes]:
        raw = self._file.read(BlockHandle(offset, size, blocks.RECORD))
        return decode_record(raw, self.path)

    def read_span(self, offset: int, size: int) -> bytes:
        """Raw record-region bytes, used by readahead-style bulk reads."""
        return self._file.read(BlockHandle(offset, size, blocks.RECORD))

    def get(self, key: bytes) -> bytes | None:
        """Point lookup: filter, one index partition, one record read."""
        if not self.filter().contains_hash(hash_key(key)):
            return None
        entry = self.lookup_index(key)
        if entry is None:
            return None
        k, v = self.read_record(entry.offset, entry.size)
        if k != key:
            raise FormatError(self.path, "record", "index/record key mismatch")
        return v

    def close(self) -> None:
        self._file.close()


def decode_record(raw: bytes, path: str = "<buffer>") -> tuple[bytes, bytes]:
    if len(raw) < RECORD_HEADER:
        raise FormatError(path, "record", "short record")
    (klen,) = U32.unpack_from(raw, 0)
    (vlen,) = U32.unpack_from(raw, 4)
    if RECORD_HEADER + klen + vlen != len(raw):
        raise FormatError(path, "record", "length mismatch")
    key = raw[RECORD_HEADER : RECORD_HEADER + klen]
    value = raw[RECORD_HEADER + klen :]
    return key, value


def read_value_index(path: str, stats=None) -> list[IndexRecord]:
    """Open a value table cold and return its dense index.

    Performs footer + directory + index-partition I/O only; no record
    bytes are touched.
    """
    reader = ValueTableReader(path, file_number=0, cache=None, stats=stats)
    try:
        return reader.index_entries()
    finally:
        reader.close()
