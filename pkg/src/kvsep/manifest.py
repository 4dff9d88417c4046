"""Manifest: append-only, CRC-framed log of version edits.

Each record is crc32 u32 | len u32 | JSON payload. A ``CURRENT`` file
names the live manifest; recovery rewrites a snapshot manifest and swaps
``CURRENT`` atomically. A truncated final record (crash mid-append) is
tolerated and trimmed; a complete record failing its CRC is fatal
corruption.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .encoding import U32, crc32
from .errors import FormatError

CURRENT = "CURRENT"


def manifest_name(number: int) -> str:
    return f"MANIFEST-{number:06d}"


def _hex(b: bytes) -> str:
    return b.hex()


def _unhex(s: str) -> bytes:
    return bytes.fromhex(s)


@dataclass
class VersionEdit:
    added_ksst: list = field(default_factory=list)  # FileMeta dicts
    removed_ksst: list = field(default_factory=list)  # (level, file_number)
    added_vsst: list = field(default_factory=list)  # VsstMeta dicts
    retired_vsst: list = field(default_factory=list)  # numbers retired with no successor
    removed_vsst: list = field(default_factory=list)  # file numbers gone from disk
    inherit: list = field(default_factory=list)  # (old, new)
    garbage: list = field(default_factory=list)  # (vsst, bytes_delta, entries_delta)
    next_file_number: int | None = None
    last_sequence: int | None = None
    log_number: int | None = None

    def encode(self) -> bytes:
        doc = {}
        if self.added_ksst:
            doc["ak"] = [
                {
                    "n": m["file_number"],
                    "l": m["level"],
                    "s": _hex(m["smallest"]),
                    "g": _hex(m["largest"]),
                    "r": m["raw_size"],
                    "e": m["entry_count"],
                    "d": sorted(m["dependencies"].items()),
                }
                for m in self.added_ksst
            ]
        if self.removed_ksst:
            doc["rk"] = list(self.removed_ksst)
        if self.added_vsst:
            doc["av"] = [
                {
                    "n": m["file_number"],
                    "e": m["total_entries"],
                    "b": m["total_value_bytes"],
                    "t": m["temperature"],
                    **({"s": m["state"]} if m.get("state", "live") != "live" else {}),
                }
                for m in self.added_vsst
            ]
        if self.retired_vsst:
            doc["tv"] = list(self.retired_vsst)
        if self.removed_vsst:
            doc["rv"] = list(self.removed_vsst)
        if self.inherit:
            doc["in"] = list(self.inherit)
        if self.garbage:
            doc["gb"] = list(self.garbage)
        if self.next_file_number is not None:
            doc["nf"] = self.next_file_number
        if self.last_sequence is not None:
            doc["ls"] = self.last_sequence
        if self.log_number is not None:
            doc["ln"] = self.log_number
        return json.dumps(doc, separators=(",", ":")).encode()

    @classmethod
    def decode(cls, payload: bytes) -> "VersionEdit":
        doc = json.loads(payload.decode())
        edit = cls()
        for m in doc.get("ak", []):
            edit.added_ksst.append(
                {
                    "file_number": m["n"],
                    "level": m["l"],
                    "smallest": _unhex(m["s"]),
                    "largest": _unhex(m["g"]),
                    "raw_size": m["r"],
                    "entry_count": m["e"],
                    "dependencies": {int(v): c for v, c in m["d"]},
                }
            )
        edit.removed_ksst = [tuple(x) for x in doc.get("rk", [])]
        for m in doc.get("av", []):
            edit.added_vsst.append(
                {
                    "file_number": m["n"],
                    "total_entries": m["e"],
                    "total_value_bytes": m["b"],
                    "temperature": m["t"],
                    "state": m.get("s", "live"),
                }
            )
        edit.retired_vsst = list(doc.get("tv", []))
        edit.removed_vsst = list(doc.get("rv", []))
        edit.inherit = [tuple(x) for x in doc.get("in", [])]
        edit.garbage = [tuple(x) for x in doc.get("gb", [])]
        edit.next_file_number = doc.get("nf")
        edit.last_sequence = doc.get("ls")
        edit.log_number = doc.get("ln")
        return edit


class ManifestWriter:
    def __init__(self, path: str, fsync: bool = False):
        self.path = path
        self.fsync = fsync
        self._f = open(path, "ab")
        self.records = 0

    def append(self, edit: VersionEdit) -> None:
        payload = edit.encode()
        self._f.write(U32.pack(crc32(payload)) + U32.pack(len(payload)) + payload)
        self._f.flush()
        if self.fsync:
            os.fsync(self._f.fileno())
        self.records += 1

    def close(self) -> None:
        self._f.close()


def read_manifest(path: str) -> list[VersionEdit]:
    with open(path, "rb") as f:
        buf = f.read()
    edits = []
    pos = 0
    while pos + 8 <= len(buf):
        (want,) = U32.unpack_from(buf, pos)
        (length,) = U32.unpack_from(buf, pos + 4)
        if pos + 8 + length > len(buf):
            break  # torn tail from a crash mid-append; valid prefix stands
        payload = buf[pos + 8 : pos + 8 + length]
        if crc32(payload) != want:
            raise FormatError(path, "manifest record", f"crc mismatch at {pos}")
        edits.append(VersionEdit.decode(payload))
        pos += 8 + length
    return edits


def read_current(directory: str) -> str | None:
    path = os.path.join(directory, CURRENT)
    if not os.path.exists(path):
        return None
    with open(path) as f:
        name = f.read().strip()
    if not name:
        raise FormatError(path, "current pointer", "empty")
    return name


def write_current(directory: str, name: str, fsync: bool = False) -> None:
    path = os.path.join(directory, CURRENT)
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        f.write(name + "\n")
        f.flush()
        if fsync:
            os.fsync(f.fileno())
    os.replace(tmp, path)
