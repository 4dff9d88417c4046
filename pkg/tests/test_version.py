"""Compensated sizing, level targets/scores, and the compaction picker."""

import random

import pytest

from kvsep.config import EngineConfig
from kvsep.errors import AccountingError
from kvsep.valuestore import ValueStore, VsstMeta
from kvsep.version import (
    FileMeta,
    Version,
    compensated_size,
    compute_level_targets,
    level_score,
    pick_compaction,
)

MIB = 1 << 20
GIB = 1 << 30


def cfg(**kw):
    base = dict(base_level_target=4 * MIB, max_levels=7, l0_compaction_trigger=4)
    base.update(kw)
    return EngineConfig(**base)


def registry_with(*files):
    reg = ValueStore()
    for number, entries, nbytes in files:
        reg.register(VsstMeta(number, entries, nbytes))
    return reg


def meta(number, level, lo, hi, raw, entries=10, deps=None):
    return FileMeta(number, level, lo, hi, raw, entries, deps or {})


class TestCompensatedSize:
    def test_half_referenced_256mib(self):
        reg = registry_with((5, 1000, 256 * MIB))
        m = meta(1, 0, b"a", b"z", MIB, deps={5: 500})
        assert compensated_size(m, reg) == MIB + 128 * MIB

    def test_no_dependencies_equals_raw(self):
        reg = registry_with()
        m = meta(1, 0, b"a", b"z", 7 * MIB)
        assert compensated_size(m, reg) == 7 * MIB

    def test_two_dependencies(self):
        reg = registry_with((5, 100, 100 * MIB), (6, 100, 200 * MIB))
        m = meta(1, 0, b"a", b"z", 2 * MIB, deps={5: 25, 6: 10})
        assert compensated_size(m, reg) == (2 + 25 + 20) * MIB

    def test_unknown_dependency_raises(self):
        reg = registry_with()
        m = meta(1, 0, b"a", b"z", MIB, deps={99: 1})
        with pytest.raises(AccountingError):
            compensated_size(m, reg)

    def test_resolves_through_inheritance(self):
        reg = registry_with((5, 100, 10 * MIB), (9, 50, 6 * MIB))
        reg.retire(5, 9)
        m = meta(1, 0, b"a", b"z", 0, deps={5: 25})
        # 25 refs against the live successor: 25/50 of 6 MiB.
        assert compensated_size(m, reg) == pytest.approx(3 * MIB)

    def test_disabled_compensation_is_raw(self):
        reg = registry_with((5, 1000, 256 * MIB))
        m = meta(1, 0, b"a", b"z", MIB, deps={5: 500})
        assert compensated_size(m, reg, enabled=False) == MIB


class TestTargetsAndScores:
    def test_last_level_anchors_targets(self):
        c = cfg()
        reg = registry_with((1, 1000, 10 * GIB))
        v = Version(7)
        v.levels[6].append(meta(1, 6, b"a", b"z", MIB, deps={1: 1000}))
        plan = compute_level_targets(v, reg, c)
        assert plan.targets[6] == pytest.approx(10 * GIB + MIB)
        assert plan.targets[5] == pytest.approx(plan.targets[6] / 10)
        # Monotone x10 down to the base floor.
        for level in range(plan.base_level, 6):
            assert plan.targets[level + 1] == pytest.approx(plan.targets[level] * 10)

    def test_empty_tree_base_targets(self):
        c = cfg()
        plan = compute_level_targets(Version(7), registry_with(), c)
        assert plan.base_level == 6
        assert plan.targets[6] == c.base_level_target

    def test_score_double_target(self):
        c = cfg()
        reg = registry_with()
        v = Version(7)
        v.levels[6].append(meta(1, 6, b"a", b"m", 40 * MIB))
        v.levels[5].append(meta(2, 5, b"a", b"z", 8 * MIB))
        plan = compute_level_targets(v, reg, c)
        # L6 anchors at 40 MiB, so L5 targets 4 MiB and holds twice that.
        assert plan.targets[5] == pytest.approx(4 * MIB)
        assert level_score(v, 5, plan, c) == pytest.approx(2.0)

    def test_stranded_level_above_base_drains(self):
        c = cfg()
        v = Version(7)
        v.levels[6].append(meta(1, 6, b"a", b"m", 8 * MIB))
        v.levels[5].append(meta(2, 5, b"a", b"z", MIB))
        plan = compute_level_targets(v, reg := registry_with(), c)
        assert plan.base_level == 6  # L5 target would fall under the floor
        assert level_score(v, 5, plan, c) == float("inf")
        job = pick_compaction(v, reg, c)
        assert job is not None and job.level == 5

    def test_empty_level_scores_zero(self):
        c = cfg()
        v = Version(7)
        v.levels[6].append(meta(1, 6, b"a", b"z", 8 * MIB))
        plan = compute_level_targets(v, registry_with(), c)
        assert level_score(v, 3, plan, c) == 0.0

    def test_l0_count_trigger(self):
        c = cfg()
        v = Version(7)
        for i in range(4):
            v.levels[0].append(meta(i + 1, 0, b"a", b"z", 1000))
        plan = compute_level_targets(v, registry_with(), c)
        assert level_score(v, 0, plan, c) >= 1.0


class TestPickCompaction:
    def test_density_argmax(self):
        c = cfg()
        reg = registry_with((10, 100, 400 * MIB), (11, 100, 30 * MIB))
        v = Version(7)
        v.levels[6].append(meta(1, 6, b"a", b"z", 100 * MIB))
        # Two L5 files: 40x density vs 3x density.
        v.levels[5].append(meta(2, 5, b"a", b"f", 10 * MIB, deps={10: 100}))
        v.levels[5].append(meta(3, 5, b"g", b"z", 10 * MIB, deps={11: 100}))
        job = pick_compaction(v, reg, c)
        assert job is not None
        assert job.level == 5
        assert [m.file_number for m in job.inputs] == [2]
        assert [m.file_number for m in job.next_inputs] == [1]

    def test_all_under_target_returns_none(self):
        c = cfg()
        v = Version(7)
        v.levels[6].append(meta(1, 6, b"a", b"z", 2 * MIB))
        assert pick_compaction(v, registry_with(), c) is None

    def test_l0_overlap_closure(self):
        c = cfg()
        v = Version(7)
        v.levels[0].append(meta(1, 0, b"a", b"m", 10 * MIB))
        v.levels[0].append(meta(2, 0, b"k", b"t", 10 * MIB))
        v.levels[0].append(meta(3, 0, b"s", b"z", 10 * MIB))
        v.levels[0].append(meta(4, 0, b"zz", b"zzz", 10 * MIB))
        job = pick_compaction(v, registry_with(), c)
        assert job is not None and job.level == 0
        # Chain a-m, k-t, s-z overlaps transitively; zz stands alone but the
        # seed's closure must include every file chained to it.
        numbers = {m.file_number for m in job.inputs}
        assert {1, 2, 3} <= numbers or numbers == {4}

    def test_chosen_level_is_score_argmax_random(self):
        c = cfg()
        rnd = random.Random(42)
        for _ in range(50):
            v = Version(7)
            reg = ValueStore()
            vsst_no = 1000
            for level in range(7):
                for i in range(rnd.randrange(0, 4)):
                    lo = bytes([rnd.randrange(65, 85)])
                    hi = lo + b"zz"
                    deps = {}
                    if rnd.random() < 0.5:
                        reg.register(VsstMeta(vsst_no, 100, rnd.randrange(1, 64) * MIB))
                        deps = {vsst_no: rnd.randrange(1, 101)}
                        vsst_no += 1
                    fm = meta(
                        vsst_no * 10 + level, level, lo, hi,
                        rnd.randrange(1, 20) * MIB, deps=deps,
                    )
                    v.levels[level].append(fm)
                if level > 0:
                    v.levels[level].sort(key=lambda m: m.smallest)
            job = pick_compaction(v, reg, c)
            plan = compute_level_targets(v, reg, c)
            scores = {
                level: level_score(v, level, plan, c)
                for level in range(6)
                if v.levels[level]
            }
            if job is None:
                assert all(s <= 1.0 for s in scores.values())
            else:
                best = max(scores.values())
                assert best > 1.0
                assert scores[job.level] == best

    def test_compensation_neutrality_without_separation(self):
        c = cfg()
        rnd = random.Random(7)
        for _ in range(30):
            v = Version(7)
            for level in range(7):
                for i in range(rnd.randrange(0, 4)):
                    lo = bytes([rnd.randrange(65, 85)])
                    v.levels[level].append(
                        meta(rnd.randrange(1, 10_000), level, lo, lo + b"q",
                             rnd.randrange(1, 30) * MIB)
                    )
                if level:
                    v.levels[level].sort(key=lambda m: m.smallest)
            reg = ValueStore()
            with_comp = pick_compaction(v, reg, c, enabled=True)
            without = pick_compaction(v, reg, c, enabled=False)
            if with_comp is None:
                assert without is None
            else:
                assert without is not None
                assert with_comp.level == without.level
                assert [m.file_number for m in with_comp.inputs] == [
                    m.file_number for m in without.inputs
                ]

    def test_argmax_stable_under_scaling(self):
        c = cfg(base_level_target=1)
        rnd = random.Random(3)
        for _ in range(30):
            v = Version(7)
            reg = ValueStore()
            scaled = ValueStore()
            factor = 3
            number = 1
            for level in range(7):
                for _ in range(rnd.randrange(0, 4)):
                    lo = bytes([rnd.randrange(65, 85)])
                    nbytes = rnd.randrange(1, 64) * MIB
                    reg.register(VsstMeta(number, 100, nbytes))
                    scaled.register(VsstMeta(number, 100, nbytes * factor))
                    raw = rnd.randrange(1, 8) * MIB
                    v.levels[level].append(
                        meta(number + 100_000, level, lo, lo + b"q", raw,
                             deps={number: rnd.randrange(1, 101)})
                    )
                    number += 1
                if level:
                    v.levels[level].sort(key=lambda m: m.smallest)
            base_choice = pick_compaction(v, reg, c)
            # Scale every compensated size: raw parts too.
            v2 = Version(7)
            for level in range(7):
                for m in v.levels[level]:
                    v2.levels[level].append(
                        meta(m.file_number, level, m.smallest, m.largest,
                             m.raw_size * factor, deps=dict(m.dependencies))
                    )
            scaled_choice = pick_compaction(v2, scaled, c)
            if base_choice is None:
                assert scaled_choice is None
            else:
                assert scaled_choice is not None
                assert scaled_choice.level == base_choice.level
                assert [m.file_number for m in scaled_choice.inputs] == [
                    m.file_number for m in base_choice.inputs
                ]

    def test_compensated_score_at_least_raw(self):
        c = cfg()
        rnd = random.Random(11)
        for _ in range(40):
            reg = ValueStore()
            v = Version(7)
            reg.register(VsstMeta(1, 1000, rnd.randrange(1, 512) * MIB))
            v.levels[5].append(
                meta(2, 5, b"a", b"m", rnd.randrange(1, 16) * MIB,
                     deps={1: rnd.randrange(0, 1001)} if rnd.random() < 0.8 else {})
            )
            v.levels[6].append(meta(3, 6, b"a", b"z", rnd.randrange(1, 64) * MIB))
            with_plan = compute_level_targets(v, reg, c, enabled=True)
            raw_plan = compute_level_targets(v, reg, c, enabled=False)
            assert with_plan.compensated[5] >= raw_plan.compensated[5]
