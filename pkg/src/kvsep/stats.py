"""Thread-safe counters with component attribution.

Every byte of file I/O and every block access in the store is charged to
the component that caused it (foreground, flush, compaction, gc) plus a
process-wide total, so reports can break totals down without double
bookkeeping.
"""

from __future__ import annotations

import threading
from collections import defaultdict

FOREGROUND = "foreground"
FLUSH = "flush"
COMPACTION = "compaction"
GC = "gc"

_ctx = threading.local()


def current_component() -> str:
    stack = getattr(_ctx, "stack", None)
    return stack[-1] if stack else FOREGROUND


class component:
    """Context manager attributing enclosed I/O to a named component."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        stack = getattr(_ctx, "stack", None)
        if stack is None:
            stack = _ctx.stack = []
        stack.append(self.name)
        return self

    def __exit__(self, *exc):
        _ctx.stack.pop()
        return False


class Stats:
    """Monotone counter map keyed by dotted metric strings."""

    def __init__(self):
        self._lock = threading.Lock()
        self._counters: dict[str, int] = defaultdict(int)

    def inc(self, metric: str, n: int = 1) -> None:
        with self._lock:
            self._counters[metric] += n

    def charge_io(self, kind: str, direction: str, nbytes: int) -> None:
        """Charge nbytes of file I/O to the active component and the total."""
        comp = current_component()
        with self._lock:
            self._counters[f"{comp}.{direction}_bytes"] += nbytes
            self._counters[f"{comp}.{direction}_bytes.{kind}"] += nbytes
            self._counters[f"total.{direction}_bytes"] += nbytes

    def note_block_access(self, kind: str) -> None:
        comp = current_component()
        with self._lock:
            self._counters[f"{comp}.block_access.{kind}"] += 1

    def get(self, metric: str) -> int:
        with self._lock:
            return self._counters.get(metric, 0)

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            return dict(self._counters)

    def delta_since(self, before: dict[str, int]) -> dict[str, int]:
        now = self.snapshot()
        keys = set(now) | set(before)
        return {k: now.get(k, 0) - before.get(k, 0) for k in keys}
