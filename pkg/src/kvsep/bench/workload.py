"""Workload generation: key/value distributions and operation streams.

Keys are 24 bytes: an 8-hex-char hash prefix (for spread) plus the rank as
a zero-padded 16-digit decimal. Value sizes come from a fixed size, the
small/large mix, or a generalized Pareto distribution whose scale is
solved so the clamped mean hits the requested target. Streams are
pre-generated from the seed, so results do not depend on client count.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

KEY_SIZE = 24
PARETO_SHAPE = 0.2
PARETO_MIN = 64
PARETO_MAX = 64 * 1024

LOAD = "load"
UPDATE = "update"
READ = "read"
SCAN = "scan"
MIXED = "mixed"

OP_PUT = 0
OP_READ = 1
OP_SCAN = 2
OP_RMW = 3  # read-modify-write


@dataclass
class ValueDist:
    kind: str  # fixed | mixed | pareto
    fixed: int = 0
    small_lo: int = 100
    small_hi: int = 512
    large: int = 16 * 1024
    large_fraction: float = 0.5
    mean: int = 1024

    def __post_init__(self):
        if self.kind == "fixed" and self.fixed < 1:
            raise ValueError("fixed size must be >= 1 byte")
        if self.kind == "mixed":
            if not 1 <= self.small_lo <= self.small_hi:
                raise ValueError("bad small-value range")
            if not 0.0 <= self.large_fraction <= 1.0:
                raise ValueError("large_fraction must be in [0, 1]")
        if self.kind == "pareto" and not PARETO_MIN <= self.mean <= PARETO_MAX:
            raise ValueError(f"pareto mean must be in [{PARETO_MIN}, {PARETO_MAX}]")

    @classmethod
    def parse(cls, text: str) -> "ValueDist":
        kind, _, rest = text.partition(":")
        if kind == "fixed":
            return cls("fixed", fixed=int(rest))
        if kind == "mixed":
            if not rest:
                return cls("mixed")
            lo, hi, large, frac = rest.split(",")
            return cls("mixed", small_lo=int(lo), small_hi=int(hi),
                       large=int(large), large_fraction=float(frac))
        if kind == "pareto":
            return cls("pareto", mean=int(rest) if rest else 1024)
        raise ValueError(f"unknown value distribution {text!r}")

    def mean_size(self) -> float:
        if self.kind == "fixed":
            return float(self.fixed)
        if self.kind == "mixed":
            small = (self.small_lo + self.small_hi) / 2
            return self.large_fraction * self.large + (1 - self.large_fraction) * small
        return float(self.mean)


@dataclass
class KeyDist:
    kind: str  # uniform | zipfian
    theta: float = 0.99

    def __post_init__(self):
        if self.kind == "zipfian" and not 0.0 < self.theta <= 1.0:
            raise ValueError("zipfian theta must be in (0, 1]")

    @classmethod
    def parse(cls, text: str) -> "KeyDist":
        kind, _, rest = text.partition(":")
        if kind == "uniform":
            return cls("uniform")
        if kind in ("zipf", "zipfian"):
            return cls("zipfian", theta=float(rest) if rest else 0.99)
        raise ValueError(f"unknown key distribution {text!r}")


@dataclass
class WorkloadSpec:
    phase: str
    key_space_size: int
    op_count: int = 0
    byte_target: int = 0
    key_dist: KeyDist = field(default_factory=lambda: KeyDist("zipfian"))
    value_dist: ValueDist = field(default_factory=lambda: ValueDist("pareto"))
    read_ratio: float = 0.5  # mixed phase only
    rmw: bool = False  # mixed writes become read-modify-writes
    scan_max_len: int = 1000
    seed: int = 1

    def __post_init__(self):
        if self.key_space_size <= 0:
            raise ValueError("key_space_size must be positive")
        if self.phase not in (LOAD, UPDATE, READ, SCAN, MIXED):
            raise ValueError(f"unknown phase {self.phase!r}")


def encode_key(rank: int) -> bytes:
    prefix = hashlib.blake2b(str(rank).encode(), digest_size=4).hexdigest()
    return (prefix + f"{rank:016d}").encode()


def zeta(n: int, theta: float) -> float:
    return float(np.sum(1.0 / np.power(np.arange(1, n + 1, dtype=np.float64), theta)))


class ZipfianRanks:
    """Rank sampler with the usual zeta-based approximation for theta < 1.

    Rank 0 is the most frequent; its exact mass is 1/zeta(n, theta), which
    benchmark checks compare against observed frequencies.
    """

    def __init__(self, n: int, theta: float):
        self.n = n
        self.theta = theta
        self.zetan = zeta(n, theta)
        self.alpha = 1.0 / (1.0 - theta) if theta != 1.0 else None
        self.zeta2 = zeta(2, theta)
        if self.alpha is not None:
            self.eta = (1 - (2.0 / n) ** (1 - theta)) / (1 - self.zeta2 / self.zetan)

    def top_rank_mass(self) -> float:
        return 1.0 / self.zetan

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        u = rng.random(count)
        if self.alpha is None:
            # theta == 1: inverse CDF over the harmonic mass, done by search.
            masses = np.cumsum(1.0 / np.arange(1, self.n + 1)) / self.zetan
            return np.searchsorted(masses, u)
        uz = u * self.zetan
        ranks = (self.n * np.power(self.eta * u - self.eta + 1, self.alpha)).astype(np.int64)
        ranks = np.clip(ranks, 0, self.n - 1)
        ranks = np.where(uz < 1.0, 0, ranks)
        ranks = np.where((uz >= 1.0) & (uz < 1.0 + 0.5**self.theta), 1, ranks)
        return ranks


def gen_ranks(spec: WorkloadSpec, rng: np.random.Generator, count: int) -> np.ndarray:
    if spec.key_dist.kind == "uniform":
        return rng.integers(0, spec.key_space_size, size=count)
    return ZipfianRanks(spec.key_space_size, spec.key_dist.theta).sample(rng, count)


def pareto_scale_for_mean(mean: float, shape: float = PARETO_SHAPE,
                          lo: int = PARETO_MIN, hi: int = PARETO_MAX) -> float:
    """Solve the generalized-Pareto scale so that E[min(X, hi)] == mean,
    with X supported on [lo, inf). Closed form of the truncated mean via
    the survival function keeps this exact; bisection inverts it."""
    if not lo < mean < hi:
        raise ValueError(f"target mean {mean} outside ({lo}, {hi})")

    def clipped_mean(sigma: float) -> float:
        t = 1.0 + shape * (hi - lo) / sigma
        return lo + sigma / (1.0 - shape) * (1.0 - t ** (1.0 - 1.0 / shape))

    a, b = 1e-6, float(hi)
    for _ in range(200):
        mid = 0.5 * (a + b)
        if clipped_mean(mid) < mean:
            a = mid
        else:
            b = mid
    return 0.5 * (a + b)


def gen_value_sizes(spec: ValueDist, rng: np.random.Generator, count: int) -> np.ndarray:
    if spec.kind == "fixed":
        return np.full(count, spec.fixed, dtype=np.int64)
    if spec.kind == "mixed":
        large = rng.random(count) < spec.large_fraction
        small = rng.integers(spec.small_lo, spec.small_hi + 1, size=count)
        return np.where(large, spec.large, small).astype(np.int64)
    sigma = pareto_scale_for_mean(float(spec.mean))
    u = rng.random(count)
    x = PARETO_MIN + sigma / PARETO_SHAPE * (np.power(1 - u, -PARETO_SHAPE) - 1)
    return np.clip(x, PARETO_MIN, PARETO_MAX).astype(np.int64)


def gen_value_size(spec: ValueDist, rng: np.random.Generator) -> int:
    return int(gen_value_sizes(spec, rng, 1)[0])


def gen_key(spec: WorkloadSpec, rng: np.random.Generator) -> bytes:
    return encode_key(int(gen_ranks(spec, rng, 1)[0]))


def value_payload(rank: int, size: int) -> bytes:
    """Deterministic value bytes so reads can verify content by key."""
    seed = hashlib.blake2b(f"{rank}:{size}".encode(), digest_size=8).digest()
    reps = size // len(seed) + 1
    return (seed * reps)[:size]


@dataclass
class OpStream:
    """Pre-generated operations for one phase."""

    ops: np.ndarray  # op codes
    ranks: np.ndarray
    sizes: np.ndarray  # value sizes (puts) or scan lengths (scans)

    def __len__(self) -> int:
        return len(self.ops)


def generate_stream(spec: WorkloadSpec) -> OpStream:
    rng = np.random.default_rng(spec.seed)
    if spec.phase == LOAD:
        count = spec.op_count
        if count == 0:
            if spec.byte_target:
                mean = spec.value_dist.mean_size() + KEY_SIZE
                count = max(1, int(spec.byte_target / mean * 1.25) + 16)
            else:
                count = spec.key_space_size
        ranks = rng.permutation(spec.key_space_size)[:count]
        if count > spec.key_space_size:
            extra = rng.integers(0, spec.key_space_size, size=count - spec.key_space_size)
            ranks = np.concatenate([ranks, extra])
        sizes = gen_value_sizes(spec.value_dist, rng, count)
        return OpStream(np.full(count, OP_PUT), ranks, sizes)
    if spec.phase == UPDATE:
        count = spec.op_count
        if count == 0:
            # Overshoot; the runner cuts at the byte target exactly.
            mean = spec.value_dist.mean_size() + KEY_SIZE
            count = max(1, int(spec.byte_target / mean * 1.25) + 16)
        ranks = gen_ranks(spec, rng, count)
        sizes = gen_value_sizes(spec.value_dist, rng, count)
        return OpStream(np.full(count, OP_PUT), ranks, sizes)
    if spec.phase == READ:
        ranks = gen_ranks(spec, rng, spec.op_count)
        return OpStream(np.full(spec.op_count, OP_READ), ranks, np.zeros(spec.op_count, dtype=np.int64))
    if spec.phase == SCAN:
        ranks = gen_ranks(spec, rng, spec.op_count)
        lengths = rng.integers(1, spec.scan_max_len + 1, size=spec.op_count)
        return OpStream(np.full(spec.op_count, OP_SCAN), ranks, lengths)
    # mixed
    ranks = gen_ranks(spec, rng, spec.op_count)
    sizes = gen_value_sizes(spec.value_dist, rng, spec.op_count)
    reads = rng.random(spec.op_count) < spec.read_ratio
    write_op = OP_RMW if spec.rmw else OP_PUT
    ops = np.where(reads, OP_READ, write_op)
    return OpStream(ops, ranks, sizes)
