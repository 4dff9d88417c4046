"""Space-amplification accounting and the usage-driven write throttle.

The index tree's amplification is the compensated mass of the levels
above the deepest non-empty one, relative to that level. Dead value bytes
split into exposed garbage (exact, from the drop ledger) and hidden
garbage (not yet recognized; estimated from the same upper/last level
proportion). Overall value-store amplification is exposed garbage over
valid data plus the index amplification.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass

from .errors import WriteStalled
from .version import Version, compensated_size

OPEN = "open"
DELAYED = "delayed"
HALTED = "halted"


@dataclass
class SpaceStats:
    k_u: float = 0.0  # compensated bytes above the last non-empty level
    k_l: float = 0.0  # compensated bytes of the last non-empty level
    valid_bytes: float = 0.0  # D
    exposed_garbage: int = 0  # G_E
    hidden_estimate: float = 0.0  # G_H estimate
    total_value_bytes: int = 0
    disk_bytes: int = 0
    throttle_state: str = OPEN

    CSV_FIELDS = (
        "timestamp", "k_u", "k_l", "valid_bytes", "exposed_garbage",
        "hidden_estimate", "s_index", "s_value", "disk_bytes", "throttle_state",
    )

    def csv_row(self, timestamp: float) -> list:
        s_index = index_space_amp(self) if self.k_l > 0 else ""
        s_value = value_space_amp(self) if self.k_l > 0 and self.valid_bytes > 0 else ""
        return [
            f"{timestamp:.6f}", f"{self.k_u:.0f}", f"{self.k_l:.0f}",
            f"{self.valid_bytes:.0f}", self.exposed_garbage,
            f"{self.hidden_estimate:.0f}",
            s_index if s_index == "" else f"{s_index:.4f}",
            s_value if s_value == "" else f"{s_value:.4f}",
            self.disk_bytes, self.throttle_state,
        ]


def index_space_amp(stats: SpaceStats) -> float:
    if stats.k_l <= 0:
        raise ValueError("index amplification undefined: empty last level")
    return (stats.k_u + stats.k_l) / stats.k_l


def hidden_garbage_estimate(stats: SpaceStats) -> float:
    if stats.k_l <= 0:
        raise ValueError("hidden-garbage estimate undefined: empty last level")
    return stats.valid_bytes * stats.k_u / stats.k_l


def value_space_amp(stats: SpaceStats) -> float:
    if stats.valid_bytes <= 0:
        raise ValueError("value amplification undefined: no valid data")
    return stats.exposed_garbage / stats.valid_bytes + index_space_amp(stats)


def compute_space_stats(version: Version, registry, cfg, disk_bytes: int = 0) -> SpaceStats:
    """Snapshot the model inputs from the current version and registry.

    Valid data is measured structurally: each last-level file's dependency
    counts prorate the referenced files' value bytes.
    """
    stats = SpaceStats(disk_bytes=disk_bytes)
    last = version.last_nonempty_level()
    if last is None and version.levels[0]:
        last = 0
    comp = [
        sum(compensated_size(m, registry) for m in version.levels[level])
        for level in range(len(version.levels))
    ]
    if last is not None:
        stats.k_l = comp[last]
        stats.k_u = sum(comp[:last])
    valid = 0.0
    if last is not None:
        for meta in version.levels[last]:
            for vsst, refs in meta.dependencies.items():
                vmeta = registry.get(registry.resolve(vsst))
                if vmeta is None or vmeta.state != "live" or vmeta.total_entries <= 0:
                    continue
                valid += min(1.0, refs / vmeta.total_entries) * vmeta.total_value_bytes
    stats.valid_bytes = valid
    stats.exposed_garbage = registry.total_exposed_garbage()
    stats.total_value_bytes = registry.total_live_value_bytes()
    if stats.k_l > 0:
        stats.hidden_estimate = hidden_garbage_estimate(stats)
    return stats


class SpaceThrottle:
    """Gates foreground writes on disk usage against a quota.

    State is a pure function of the latest usage poll: below the soft
    ratio writes are admitted, between soft and quota they are delayed
    proportionally (and GC turns aggressive), at or above quota they halt
    until reclamation brings usage back under and a waiter is notified.
    """

    def __init__(self, quota: int, soft_ratio: float = 0.9,
                 max_delay: float = 0.002, halt_timeout: float = 30.0):
        self.quota = quota
        self.soft_ratio = soft_ratio
        self.max_delay = max_delay
        self.halt_timeout = halt_timeout
        self.usage = 0
        self._cond = threading.Condition()
        self.stall_events = 0

    @property
    def unlimited(self) -> bool:
        return self.quota <= 0

    @property
    def soft_bytes(self) -> float:
        return self.quota * self.soft_ratio

    @property
    def state(self) -> str:
        if self.unlimited:
            return OPEN
        if self.usage >= self.quota:
            return HALTED
        if self.usage >= self.soft_bytes:
            return DELAYED
        return OPEN

    def update_usage(self, usage: int) -> None:
        with self._cond:
            self.usage = usage
            if self.state != HALTED:
                self._cond.notify_all()

    def admit(self, pending_bytes: int = 0) -> tuple[str, float]:
        """Classify a write: (decision, delay_seconds)."""
        state = self.state
        if state == OPEN:
            return "admit", 0.0
        if state == DELAYED:
            span = self.quota - self.soft_bytes
            frac = (self.usage - self.soft_bytes) / span if span > 0 else 1.0
            return "delay", self.max_delay * min(1.0, max(0.0, frac))
        return "halt", 0.0

    def gc_aggressive(self) -> bool:
        return self.state != OPEN

    def wait_until_open(self, reclaim=None, poll=None) -> None:
        """Block a halted writer until usage drops below quota.

        ``poll`` re-reads actual disk usage each round (deferred deletions
        land after the edit that logged them); ``reclaim`` runs maintenance
        inline when the engine has no background workers. Raises
        WriteStalled after the halt timeout.
        """
        deadline = time.monotonic() + self.halt_timeout
        while True:
            if poll is not None:
                self.update_usage(poll())
            if self.state != HALTED:
                return
            if reclaim is not None:
                progressed = reclaim()
                if self.state != HALTED:
                    return
                if progressed:
                    continue
            with self._cond:
                if self.state != HALTED:
                    return
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    self.stall_events += 1
                    raise WriteStalled(
                        f"usage {self.usage} over quota {self.quota} for {self.halt_timeout}s"
                    )
                self._cond.wait(timeout=min(remaining, 0.05))
