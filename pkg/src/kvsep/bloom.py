"""Double-hashing Bloom filter, 10 bits per key by default."""

from __future__ import annotations

import hashlib

from .encoding import U32, U64, Cursor


def hash_key(key: bytes) -> tuple[int, int]:
    """Stable 128-bit hash split into the two double-hashing seeds."""
    d = hashlib.blake2b(key, digest_size=16).digest()
    return int.from_bytes(d[:8], "little"), int.from_bytes(d[8:], "little")


class BloomFilter:
    def __init__(self, nbits: int, k: int, bits: bytearray):
        self.nbits = nbits
        self.k = k
        self.bits = bits

    @classmethod
    def build(cls, keys, bits_per_key: int = 10) -> "BloomFilter":
        keys = list(keys)
        nbits = max(64, len(keys) * bits_per_key)
        # round(bits_per_key * ln 2) probes minimizes the false-positive rate
        k = max(1, min(30, round(bits_per_key * 0.6931)))
        bits = bytearray((nbits + 7) // 8)
        for key in keys:
            h1, h2 = hash_key(key)
            for i in range(k):
                b = (h1 + i * h2) % nbits
                bits[b >> 3] |= 1 << (b & 7)
        return cls(nbits, k, bits)

    def contains_hash(self, h: tuple[int, int]) -> bool:
        h1, h2 = h
        nbits = self.nbits
        bits = self.bits
        for i in range(self.k):
            b = (h1 + i * h2) % nbits
            if not bits[b >> 3] & (1 << (b & 7)):
                return False
        return True

    def contains(self, key: bytes) -> bool:
        return self.contains_hash(hash_key(key))

    def to_bytes(self) -> bytes:
        return U32.pack(self.k) + U64.pack(self.nbits) + bytes(self.bits)

    @classmethod
    def from_bytes(cls, data: bytes) -> "BloomFilter":
        cur = Cursor(data)
        k = cur.u32()
        nbits = cur.u64()
        return cls(nbits, k, bytearray(data[cur.pos :]))
