import random

import pytest

from kvsep import Engine, EngineConfig


def small_config(**overrides) -> EngineConfig:
    """Desk-scale sizing that forces flush/compaction/GC activity quickly."""
    base = dict(
        memtable_size=256 << 10,
        ksst_size=64 << 10,
        vsst_size=512 << 10,
        block_cache_size=4 << 20,
        base_level_target=256 << 10,
        separation_threshold=512,
    )
    base.update(overrides)
    return EngineConfig(**base).validate()


@pytest.fixture
def engine(tmp_path):
    e = Engine.open(str(tmp_path / "db"), small_config())
    yield e
    if not e._closed:
        e.close()


def random_kv(rnd: random.Random, nkeys: int, sizes=(100, 800, 4096)):
    key = f"key{rnd.randrange(nkeys):06d}".encode()
    size = rnd.choice(sizes)
    value = bytes([rnd.randrange(256)]) * size
    return key, value
