"""Engine behavior: basic semantics, separation, recovery, oracle equivalence."""

import os
import random

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from kvsep import Engine, EngineConfig
from kvsep.key_table import INLINE, REF, KeyTableReader
from kvsep.value_table import ValueTableReader

from conftest import small_config


class TestBasics:
    def test_put_get(self, engine):
        engine.put(b"k", b"v")
        assert engine.get(b"k") == b"v"

    def test_overwrite(self, engine):
        engine.put(b"k", b"v1")
        engine.put(b"k", b"v2")
        assert engine.get(b"k") == b"v2"

    def test_get_after_delete(self, engine):
        engine.put(b"k", b"v")
        engine.delete(b"k")
        assert engine.get(b"k") is None

    def test_delete_absent_is_noop_for_reads(self, engine):
        engine.delete(b"missing")
        assert engine.get(b"missing") is None

    def test_empty_key_rejected(self, engine):
        with pytest.raises(ValueError):
            engine.put(b"", b"v")

    def test_large_value_round_trip(self, engine):
        value = os.urandom(16 << 10)
        engine.put(b"big", value)
        engine.flush_now()
        assert engine.get(b"big") == value

    def test_scan_known_keys(self, engine):
        for k in (b"a", b"b", b"c"):
            engine.put(k, b"v" + k)
        assert engine.scan(b"", 10) == [(b"a", b"va"), (b"b", b"vb"), (b"c", b"vc")]
        assert engine.scan(b"b", 10) == [(b"b", b"vb"), (b"c", b"vc")]

    def test_scan_limit_zero(self, engine):
        engine.put(b"a", b"v")
        assert engine.scan(b"", 0) == []

    def test_scan_suppresses_tombstones(self, engine):
        engine.put(b"a", b"1")
        engine.put(b"b", b"2")
        engine.flush_now()
        engine.delete(b"a")
        assert engine.scan(b"", 10) == [(b"b", b"2")]


class TestSeparation:
    def test_flush_routes_by_threshold(self, tmp_path):
        e = Engine.open(str(tmp_path / "db"), small_config(separation_threshold=512))
        e.put(b"small", b"s" * 100)
        e.put(b"large", b"L" * (16 << 10))
        e.put(b"edge", b"e" * 512)  # boundary: >= threshold separates
        e.flush_now()
        version = e.vset.current
        ksst = [m for level in version.levels for m in level]
        assert len(ksst) == 1
        reader = e.vset.tables.key_reader(ksst[0].file_number)
        assert reader.lookup(b"small").kind == INLINE
        assert reader.lookup(b"large").kind == REF
        assert reader.lookup(b"edge").kind == REF
        assert e.get(b"edge") == b"e" * 512
        e.close()

    def test_no_misrouted_values_after_flush(self, tmp_path):
        rnd = random.Random(5)
        e = Engine.open(str(tmp_path / "db"), small_config())
        for i in range(300):
            size = rnd.choice([100, 300, 511, 512, 513, 2000])
            e.put(f"k{i:04d}".encode(), bytes([i % 256]) * size)
        e.flush_now()
        threshold = e.cfg.separation_threshold
        for level in e.vset.current.levels:
            for meta in level:
                reader = e.vset.tables.key_reader(meta.file_number)
                for entry in reader.iter_entries():
                    if entry.kind == INLINE:
                        assert len(entry.value) < threshold
        for m in e.vset.registry.live_files():
            reader = e.vset.tables.value_reader(m.file_number)
            for rec in reader.index_entries():
                _, v = reader.read_record(rec.offset, rec.size)
                assert len(v) >= threshold
        e.close()

    def test_dropcache_splits_hot_cold_flush(self, tmp_path):
        e = Engine.open(str(tmp_path / "db"), small_config())
        for i in range(8):
            e.dropcache.note_dropped(f"hot{i}".encode())
        for i in range(8):
            e.put(f"hot{i}".encode(), b"h" * 1024)
            e.put(f"cold{i}".encode(), b"c" * 1024)
        e.flush_now()
        temps = {m.temperature for m in e.vset.registry.live_files()}
        assert temps == {"hot", "cold"}
        hot = [m for m in e.vset.registry.live_files() if m.temperature == "hot"]
        assert sum(m.total_entries for m in hot) == 8
        e.close()

    def test_all_hot_means_no_cold_output(self, tmp_path):
        e = Engine.open(str(tmp_path / "db"), small_config())
        for i in range(4):
            e.dropcache.note_dropped(f"k{i}".encode())
            e.put(f"k{i}".encode(), b"v" * 1024)
        e.flush_now()
        temps = [m.temperature for m in e.vset.registry.live_files()]
        assert temps == ["hot"]
        e.close()


class TestRecovery:
    def test_open_empty_dir(self, tmp_path):
        e = Engine.open(str(tmp_path / "db"))
        assert e.get(b"anything") is None
        assert e.scan(b"", 10) == []
        e.close()

    def test_acked_writes_survive_abandon(self, tmp_path):
        path = str(tmp_path / "db")
        e = Engine.open(path, small_config())
        for i in range(500):
            e.put(f"k{i:04d}".encode(), f"v{i}".encode() * 10)
        e.abandon()  # no flush, no close
        e2 = Engine.open(path, small_config())
        for i in range(500):
            assert e2.get(f"k{i:04d}".encode()) == f"v{i}".encode() * 10
        e2.close()

    def test_delete_survives_recovery(self, tmp_path):
        path = str(tmp_path / "db")
        e = Engine.open(path, small_config())
        e.put(b"k", b"v" * 2048)
        e.flush_now()
        e.delete(b"k")
        e.abandon()
        e2 = Engine.open(path, small_config())
        assert e2.get(b"k") is None
        e2.close()

    def test_torn_wal_tail_truncated(self, tmp_path):
        path = str(tmp_path / "db")
        e = Engine.open(path, small_config())
        e.put(b"a", b"1")
        e.put(b"b", b"2")
        e.abandon()
        wals = [f for f in os.listdir(path) if f.endswith(".wal")]
        assert wals
        with open(os.path.join(path, wals[0]), "ab") as f:
            f.write(b"\xde\xad\xbe")
        e2 = Engine.open(path, small_config())
        assert e2.get(b"a") == b"1"
        assert e2.get(b"b") == b"2"
        e2.close()

    def test_corrupt_manifest_fatal(self, tmp_path):
        path = str(tmp_path / "db")
        e = Engine.open(path, small_config())
        e.put(b"k", b"v" * 4096)
        e.flush_now()
        e.close()
        current = open(os.path.join(path, "CURRENT")).read().strip()
        mpath = os.path.join(path, current)
        raw = bytearray(open(mpath, "rb").read())
        raw[10] ^= 0xFF
        open(mpath, "wb").write(raw)
        from kvsep.errors import FormatError

        with pytest.raises(FormatError):
            Engine.open(path, small_config())

    def test_config_file_round_trip(self, tmp_path):
        path = str(tmp_path / "db")
        cfg = small_config(separation_threshold=300)
        e = Engine.open(path, cfg)
        e.put(b"k", b"v" * 400)
        e.close()
        e2 = Engine.open(path)  # picks up engine.conf
        assert e2.cfg.separation_threshold == 300
        assert e2.get(b"k") == b"v" * 400
        e2.close()


class TestOracleEquivalence:
    def run_ops(self, tmp_path, ops, cfg=None):
        e = Engine.open(str(tmp_path / "db"), cfg or small_config())
        oracle = {}
        for op, key, size in ops:
            if op == "put":
                value = bytes([size % 256]) * size
                e.put(key, value)
                oracle[key] = value
            elif op == "del":
                e.delete(key)
                oracle.pop(key, None)
            elif op == "get":
                expect = oracle.get(key)
                assert e.get(key) == expect
            else:  # scan
                got = e.scan(key, size)
                expect = sorted((k, v) for k, v in oracle.items() if k >= key)[:size]
                assert got == expect
        e.drain_maintenance()
        for key, value in oracle.items():
            assert e.get(key) == value
        assert e.scan(b"", len(oracle) + 1) == sorted(oracle.items())
        e.close()

    @settings(
        max_examples=12, deadline=None,
        suppress_health_check=[HealthCheck.function_scoped_fixture],
    )
    @given(
        st.lists(
            st.tuples(
                st.sampled_from(["put", "put", "put", "del", "get", "scan"]),
                st.integers(min_value=0, max_value=40).map(lambda i: f"k{i:03d}".encode()),
                st.integers(min_value=0, max_value=2000),
            ),
            max_size=120,
        )
    )
    def test_property_matches_sorted_map(self, tmp_path_factory, ops):
        self.run_ops(tmp_path_factory.mktemp("oracle"), ops)

    def test_100k_puts_full_scan_sorted(self, tmp_path):
        # Heavier seeded replay across flush/compaction/GC.
        rnd = random.Random(1234)
        e = Engine.open(str(tmp_path / "db"), small_config())
        oracle = {}
        for i in range(20_000):
            k = f"key{rnd.randrange(3000):06d}".encode()
            v = bytes([rnd.randrange(256)]) * rnd.choice([60, 400, 900, 2500])
            e.put(k, v)
            oracle[k] = v
        e.drain_maintenance()
        got = e.scan(b"", len(oracle) + 10)
        assert got == sorted(oracle.items())
        e.close()


class TestThrottleIntegration:
    def test_halt_then_recover(self, tmp_path):
        cfg = small_config(space_quota=0)
        e = Engine.open(str(tmp_path / "db"), cfg)
        rnd = random.Random(9)
        for i in range(600):
            e.put(f"k{rnd.randrange(80):03d}".encode(), bytes([i % 256]) * 2048)
        e.drain_maintenance()
        usage = e.vset.disk_usage()
        # Quota slightly above current usage: updates must stay bounded.
        e.throttle.quota = int(usage * 1.3)
        e.throttle.halt_timeout = 20.0
        peak = 0
        for i in range(1500):
            e.put(f"k{rnd.randrange(80):03d}".encode(), bytes([i % 256]) * 2048)
            peak = max(peak, e.vset.disk_usage())
        assert peak <= e.throttle.quota + e.cfg.vsst_size
        assert e.get(f"k{0:03d}".encode()) is not None
        e.close()
