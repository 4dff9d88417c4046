"""Leveled file metadata and the compensated-size compaction picker.

A key file's compensated size is its raw size plus, per referenced value
file, that file's byte size prorated by the fraction of its entries the
key file references. Scheduling on compensated sizes makes the index tree
behave as if values were never separated: levels fill, and files sink, in
proportion to the value data they pin.

Level targets anchor at the bottom level: the deepest level's target is
its own compensated size (floored at a configured base), and each level
above targets a tenth of the one below. Levels whose target would fall
under the base are unused; L0 compacts straight into the shallowest level
with a meaningful target.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import AccountingError, IntegrityError


@dataclass
class FileMeta:
    file_number: int
    level: int
    smallest: bytes
    largest: bytes
    raw_size: int
    entry_count: int
    dependencies: dict[int, int] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "file_number": self.file_number,
            "level": self.level,
            "smallest": self.smallest,
            "largest": self.largest,
            "raw_size": self.raw_size,
            "entry_count": self.entry_count,
            "dependencies": dict(self.dependencies),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FileMeta":
        return cls(
            d["file_number"], d["level"], d["smallest"], d["largest"],
            d["raw_size"], d["entry_count"], dict(d["dependencies"]),
        )

    def overlaps(self, smallest: bytes, largest: bytes) -> bool:
        return self.smallest <= largest and self.largest >= smallest


def compensated_size(meta: FileMeta, registry, enabled: bool = True) -> float:
    """raw bytes plus each dependency's prorated share of value bytes."""
    if not enabled or not meta.dependencies:
        return float(meta.raw_size)
    total = float(meta.raw_size)
    for vsst, refs in meta.dependencies.items():
        try:
            live = registry.resolve(vsst)
        except IntegrityError as exc:
            raise AccountingError(f"kSST {meta.file_number}: {exc}") from exc
        vmeta = registry.get(live)
        if vmeta is None:
            raise AccountingError(f"kSST {meta.file_number} references unknown vSST {vsst}")
        if vmeta.state != "live" or vmeta.total_entries <= 0:
            # Ghost of a fully collected file: stale references pin no bytes.
            continue
        ratio = min(1.0, refs / vmeta.total_entries)
        total += ratio * vmeta.total_value_bytes
    return total


class Version:
    """Immutable snapshot of the level layout; shared by readers via refcounts."""

    def __init__(self, num_levels: int):
        self.levels: list[list[FileMeta]] = [[] for _ in range(num_levels)]
        self.refs = 0

    def clone(self) -> "Version":
        v = Version(len(self.levels))
        v.levels = [list(files) for files in self.levels]
        return v

    def all_files(self):
        for files in self.levels:
            yield from files

    def find(self, file_number: int) -> FileMeta | None:
        for meta in self.all_files():
            if meta.file_number == file_number:
                return meta
        return None

    def overlapping(self, level: int, smallest: bytes, largest: bytes) -> list[FileMeta]:
        return [m for m in self.levels[level] if m.overlaps(smallest, largest)]

    def last_nonempty_level(self) -> int | None:
        for level in range(len(self.levels) - 1, 0, -1):
            if self.levels[level]:
                return level
        return None


@dataclass
class LevelPlan:
    targets: list[float]  # per level; index 0 unused for sizing
    base_level: int  # L0 compacts into this level
    compensated: list[float]  # per-level compensated sums


def compute_level_targets(version: Version, registry, cfg, enabled: bool | None = None) -> LevelPlan:
    if enabled is None:
        enabled = cfg.compensation_enabled
    n = len(version.levels)
    comp = [
        sum(compensated_size(m, registry, enabled) for m in version.levels[level])
        for level in range(n)
    ]
    base = float(cfg.base_level_target)
    mult = cfg.level_multiplier
    targets = [0.0] * n
    bottom = n - 1
    targets[bottom] = max(comp[bottom], base)
    base_level = bottom
    for level in range(bottom - 1, 0, -1):
        t = targets[level + 1] / mult
        if t < base:
            # Levels shallower than this stay unused; L0 jumps past them.
            break
        targets[level] = t
        base_level = level
    return LevelPlan(targets=targets, base_level=base_level, compensated=comp)


def level_score(version: Version, level: int, plan: LevelPlan, cfg) -> float:
    if level == 0:
        size_ratio = (
            plan.compensated[0] / plan.targets[plan.base_level]
            if plan.targets[plan.base_level] > 0
            else 0.0
        )
        count_ratio = len(version.levels[0]) / cfg.l0_compaction_trigger
        return max(size_ratio, count_ratio)
    if not version.levels[level]:
        return 0.0
    if plan.targets[level] <= 0:
        # Stranded above the base level (base sank after data shrank);
        # must drain downward unconditionally.
        return float("inf")
    return plan.compensated[level] / plan.targets[level]


@dataclass
class CompactionJob:
    level: int
    output_level: int
    inputs: list[FileMeta]
    next_inputs: list[FileMeta]

    def all_inputs(self):
        return self.inputs + self.next_inputs

    def key_range(self) -> tuple[bytes, bytes]:
        files = self.all_inputs()
        return min(f.smallest for f in files), max(f.largest for f in files)


def _expand_l0(files: list[FileMeta], seed: FileMeta) -> list[FileMeta]:
    # L0 files overlap arbitrarily; newer versions of a key must not sink
    # below older ones, so take the transitive overlap closure of the seed.
    chosen = {seed.file_number: seed}
    lo, hi = seed.smallest, seed.largest
    changed = True
    while changed:
        changed = False
        for m in files:
            if m.file_number not in chosen and m.overlaps(lo, hi):
                chosen[m.file_number] = m
                lo, hi = min(lo, m.smallest), max(hi, m.largest)
                changed = True
    return sorted(chosen.values(), key=lambda m: m.file_number)


def pick_compaction(version: Version, registry, cfg, enabled: bool | None = None) -> CompactionJob | None:
    """Pick the level with the highest score above 1.0, then its densest file."""
    if enabled is None:
        enabled = cfg.compensation_enabled
    plan = compute_level_targets(version, registry, cfg, enabled)
    n = len(version.levels)
    best_level, best_score = None, 0.0
    for level in range(n - 1):
        if not version.levels[level]:
            continue
        s = level_score(version, level, plan, cfg)
        # Eligible at score >= 1 (the L0 file-count trigger fires exactly at
        # the configured count); ties go to the shallower level.
        if s >= 1.0 and s > best_score:
            best_level, best_score = level, s
    if best_level is None:
        return None

    files = version.levels[best_level]

    def density(m: FileMeta) -> float:
        return compensated_size(m, registry, enabled) / max(1, m.raw_size)

    seed = min(files, key=lambda m: (-density(m), m.smallest))
    if best_level == 0:
        inputs = _expand_l0(files, seed)
        output_level = plan.base_level
    else:
        inputs = [seed]
        output_level = best_level + 1
    lo = min(f.smallest for f in inputs)
    hi = max(f.largest for f in inputs)
    next_inputs = version.overlapping(output_level, lo, hi) if output_level != best_level else []
    return CompactionJob(best_level, output_level, inputs, next_inputs)
