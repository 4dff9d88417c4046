"""kvsep: an embedded key-value-separated LSM storage engine.

Large values live in dense-indexed value tables outside the index tree;
garbage collection validates keys through reference-only lookups and reads
only surviving values. Compaction scheduling uses compensated sizes so the
index tree keeps vanilla-LSM space behavior, and a space-aware throttle
caps disk usage against a quota.
"""

from .config import EngineConfig, parse_size
from .engine import CrashPoint, Engine
from .errors import (
    AccountingError,
    ConfigError,
    FormatError,
    IntegrityError,
    StorageError,
    WriteStalled,
)

__all__ = [
    "Engine",
    "EngineConfig",
    "CrashPoint",
    "parse_size",
    "StorageError",
    "FormatError",
    "IntegrityError",
    "AccountingError",
    "WriteStalled",
    "ConfigError",
]

__version__ = "0.1.0"
