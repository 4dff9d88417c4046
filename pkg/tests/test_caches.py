"""Block cache policy and dropped-key cache behavior."""

import threading

from hypothesis import given, settings
from hypothesis import strategies as st

from kvsep.blockcache import ENTRY_OVERHEAD, BlockCache
from kvsep.dropcache import KEY_OVERHEAD, DropCache


def loader(payload: bytes):
    def fn():
        return payload, len(payload)

    return fn


class TestBlockCache:
    def test_hit_skips_loader(self):
        c = BlockCache(1 << 20)
        calls = []

        def fn():
            calls.append(1)
            return b"x", 1

        assert c.get_or_load((1, 0), "kv_data", "low", fn) == b"x"
        assert c.get_or_load((1, 0), "kv_data", "low", fn) == b"x"
        assert len(calls) == 1

    def test_high_priority_survives_low_flood(self):
        c = BlockCache(10 * (100 + ENTRY_OVERHEAD))
        c.get_or_load((1, 0), "kf_data", "high", loader(b"h" * 100))
        for i in range(50):
            c.get_or_load((2, i), "kv_data", "low", loader(b"l" * 100))
        assert c.contains((1, 0))
        assert c.charged_bytes <= c.capacity

    def test_capacity_bound(self):
        c = BlockCache(5 * (64 + ENTRY_OVERHEAD))
        for i in range(100):
            c.get_or_load((1, i), "kv_data", "low" if i % 2 else "high", loader(b"b" * 64))
            assert c.charged_bytes <= c.capacity

    def test_invalidate_file(self):
        c = BlockCache(1 << 20)
        c.get_or_load((7, 0), "kf_data", "high", loader(b"a"))
        c.get_or_load((7, 8), "kv_data", "low", loader(b"b"))
        c.get_or_load((8, 0), "kv_data", "low", loader(b"c"))
        c.invalidate_file(7)
        assert not c.contains((7, 0))
        assert not c.contains((7, 8))
        assert c.contains((8, 0))
        c.invalidate_file(99)  # unknown file is a no-op

    def test_two_pass_hit_ratio_improves(self):
        c = BlockCache(1 << 20)
        keys = [(3, i) for i in range(64)]
        for k in keys:
            c.get_or_load(k, "kf_data", "high", loader(b"x" * 512))
        first_hits = c.hits
        for k in keys:
            c.get_or_load(k, "kf_data", "high", loader(b"x" * 512))
        assert c.hits - first_hits == len(keys)

    def test_single_flight_under_concurrency(self):
        c = BlockCache(1 << 20)
        calls = []
        gate = threading.Event()

        def slow_loader():
            gate.wait(1)
            calls.append(1)
            return b"x" * 64, 64

        results = []

        def worker():
            results.append(c.get_or_load((1, 0), "kv_data", "low", slow_loader))

        threads = [threading.Thread(target=worker) for _ in range(8)]
        for t in threads:
            t.start()
        gate.set()
        for t in threads:
            t.join()
        assert len(calls) == 1
        assert results == [b"x" * 64] * 8

    def test_concurrent_stress_capacity(self):
        c = BlockCache(40 * (128 + ENTRY_OVERHEAD))
        errors = []

        def worker(wid):
            try:
                for i in range(400):
                    c.get_or_load(
                        (wid, i % 97), "kv_data", "high" if i % 3 else "low",
                        loader(bytes(128)),
                    )
                    assert c.charged_bytes <= c.capacity
            except Exception as exc:  # pragma: no cover
                errors.append(exc)

        threads = [threading.Thread(target=worker, args=(w,)) for w in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors
        assert c.charged_bytes <= c.capacity


class TestDropCache:
    def test_insert_then_contains(self):
        d = DropCache(1 << 10)
        d.note_dropped(b"k1")
        assert d.is_hot(b"k1")
        assert not d.is_hot(b"nope")

    def test_charge_rule_24b_key_is_32(self):
        d = DropCache(1 << 10)
        d.note_dropped(b"x" * 24)
        assert d.charged_bytes == 32
        assert KEY_OVERHEAD == 8

    def test_lru_eviction(self):
        d = DropCache(3 * 32)
        for i in range(4):
            d.note_dropped(f"k{i:023d}".encode())  # 24-byte keys
        assert not d.is_hot(b"k" + b"0" * 22 + b"0")
        assert d.is_hot(f"k{3:023d}".encode())

    def test_reinsert_promotes(self):
        d = DropCache(3 * 32)
        keys = [f"k{i:023d}".encode() for i in range(3)]
        for k in keys:
            d.note_dropped(k)
        d.note_dropped(keys[0])  # promote oldest
        d.note_dropped(f"k{9:023d}".encode())  # evicts keys[1]
        assert d.is_hot(keys[0])
        assert not d.is_hot(keys[1])

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(
            st.tuples(st.sampled_from(["note", "query"]), st.binary(min_size=1, max_size=40)),
            max_size=200,
        ),
        st.integers(min_value=64, max_value=512),
    )
    def test_capacity_never_exceeded(self, ops, capacity):
        d = DropCache(capacity)
        for op, key in ops:
            if op == "note":
                d.note_dropped(key)
            else:
                d.is_hot(key)
            assert d.charged_bytes <= capacity
