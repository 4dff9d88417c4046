"""Engine configuration and its plain-text ``key = value`` file form."""

from __future__ import annotations

import dataclasses
import os
import re
from dataclasses import dataclass

from .errors import ConfigError

_SIZE_RE = re.compile(r"^(\d+(?:\.\d+)?)\s*([kmgt]i?b?|b)?$", re.IGNORECASE)
_UNITS = {
    "b": 1,
    "k": 1000, "kb": 1000, "kib": 1024,
    "m": 1000**2, "mb": 1000**2, "mib": 1024**2,
    "g": 1000**3, "gb": 1000**3, "gib": 1024**3,
    "t": 1000**4, "tb": 1000**4, "tib": 1024**4,
}


def parse_size(text: str) -> int:
    m = _SIZE_RE.match(text.strip())
    if not m:
        raise ConfigError(f"bad size: {text!r}")
    num, unit = m.groups()
    mult = _UNITS[unit.lower()] if unit else 1
    return int(float(num) * mult)


@dataclass
class EngineConfig:
    # Core sizing (production-style defaults; benches override for desk runs).
    separation_threshold: int = 512
    memtable_size: int = 64 << 20
    ksst_size: int = 64 << 20
    vsst_size: int = 256 << 20
    block_cache_size: int = 1 << 30
    gc_garbage_threshold: float = 0.2
    space_quota: int = 0  # 0 = unlimited
    level_multiplier: int = 10

    # Format knobs.
    index_partition_size: int = 4096
    key_block_size: int = 4096
    bloom_bits_per_key: int = 10
    dtable_split: bool = True  # off = conventional mixed key-table layout

    # Compaction.
    max_levels: int = 7
    l0_compaction_trigger: int = 4
    base_level_target: int = 4 << 20
    compensation_enabled: bool = True

    # Garbage collection.
    gc_aggressive_threshold: float = 0.05
    gc_max_concurrent_jobs: int = 1
    gc_lazy_read: bool = True
    gc_readahead: bool = False
    gc_readahead_gap: int = 256 << 10

    # Hot/cold classification.
    dropcache_enabled: bool = True
    dropcache_capacity: int = 16 << 20

    # Cache policy.
    cache_high_priority_fraction: float = 0.5

    # Throttle.
    throttle_soft_ratio: float = 0.9
    throttle_max_delay: float = 0.002
    throttle_halt_timeout: float = 30.0

    # Runtime behaviour.
    background_workers: int = 0  # 0 = maintenance runs inline in the writer
    fsync: bool = False
    max_immutable_memtables: int = 2

    def validate(self) -> "EngineConfig":
        for name in (
            "separation_threshold", "memtable_size", "ksst_size", "vsst_size",
            "index_partition_size", "key_block_size", "base_level_target",
        ):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.gc_garbage_threshold < 1:
            raise ConfigError("gc_garbage_threshold must be in (0, 1)")
        if not 0 < self.gc_aggressive_threshold <= self.gc_garbage_threshold:
            raise ConfigError("gc_aggressive_threshold must be in (0, gc_garbage_threshold]")
        if self.space_quota < 0:
            raise ConfigError("space_quota must be >= 0 (0 = unlimited)")
        if not 0 < self.throttle_soft_ratio < 1:
            raise ConfigError("throttle_soft_ratio must be in (0, 1)")
        return self

    def to_file(self, path: str) -> None:
        lines = []
        for f in dataclasses.fields(self):
            lines.append(f"{f.name} = {getattr(self, f.name)}")
        tmp = path + ".tmp"
        with open(tmp, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        os.replace(tmp, path)

    @classmethod
    def from_file(cls, path: str) -> "EngineConfig":
        values: dict[str, str] = {}
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key = value")
                key, _, val = line.partition("=")
                values[key.strip()] = val.strip()
        kwargs = {}
        fields = {f.name: f for f in dataclasses.fields(cls)}
        for key, val in values.items():
            if key not in fields:
                raise ConfigError(f"{path}: unknown config key {key!r}")
            ftype = fields[key].type
            if ftype == "bool":
                kwargs[key] = val.lower() in ("1", "true", "yes", "on")
            elif ftype == "float":
                kwargs[key] = float(val)
            else:
                kwargs[key] = parse_size(val)
        return cls(**kwargs).validate()
