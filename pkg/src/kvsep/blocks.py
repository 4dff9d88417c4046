"""Block handles and instrumented file access.

Each on-disk region belongs to a named block kind; readers charge every
read to its kind so tests and GC instrumentation can assert which regions
were touched (e.g. reference lookups never pull inline-record blocks).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from .encoding import U64
from .errors import FormatError

# Key-table block kinds.
KF_DATA = "kf_data"  # reference/tombstone entries
KV_DATA = "kv_data"  # inline records (or mixed blocks when splitting is off)
KF_INDEX = "kf_index"
KV_INDEX = "kv_index"

# Value-table block kinds.
VALUE_INDEX = "value_index"  # dense-index partition
VALUE_DIR = "value_dir"  # partition directory
RECORD = "record"  # raw record bytes

FILTER = "filter"
META = "meta"
FOOTER = "footer"


@dataclass(frozen=True)
class BlockHandle:
    offset: int
    size: int
    kind: str

    def encode(self) -> bytes:
        return U64.pack(self.offset) + U64.pack(self.size)


HANDLE_SIZE = 16


def decode_handle(buf: bytes, pos: int, kind: str) -> BlockHandle:
    (off,) = U64.unpack_from(buf, pos)
    (size,) = U64.unpack_from(buf, pos + 8)
    return BlockHandle(off, size, kind)


class TableFile:
    """Random-access reader over one table file with byte accounting."""

    def __init__(self, path: str, stats=None):
        self.path = path
        self._f = open(path, "rb")
        self._size = os.fstat(self._f.fileno()).st_size
        self._stats = stats

    @property
    def size(self) -> int:
        return self._size

    def read(self, handle: BlockHandle) -> bytes:
        if handle.offset + handle.size > self._size:
            raise FormatError(self.path, handle.kind, "handle past EOF")
        self._f.seek(handle.offset)
        data = self._f.read(handle.size)
        if len(data) != handle.size:
            raise FormatError(self.path, handle.kind, "short read")
        if self._stats is not None:
            self._stats.charge_io(handle.kind, "read", handle.size)
        return data

    def close(self) -> None:
        self._f.close()


def write_file(path: str, data: bytes, fsync: bool = False) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(data)
        f.flush()
        if fsync:
            os.fsync(f.fileno())
    os.replace(tmp, path)
