"""Platform-stable pseudo-random streams.

The generator is SplitMix64 (Steele, Lea and Flood 2014): state advances by the
golden-ratio gamma 0x9E3779B97F4A7C15 and each output is the state passed
through a two-multiply finalizer. Seeded with 1234567 the first outputs are
6457827717110365317, 3203168211198807973, 9817491932198370423.

Sub-streams are seeded with ``derive_seed(seed, *keys)``: the first 8 bytes
(little-endian) of BLAKE2b over ``"seed:key1:key2..."``. Adding a new key for a
new stage never perturbs the seeds of existing stages.
"""

from __future__ import annotations

import hashlib

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15


def derive_seed(seed: int, *keys: object) -> int:
    text = ":".join([str(int(seed))] + [str(k) for k in keys])
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little")


class SplitMix64:
    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def randbelow(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection (no modulo bias)."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def random(self) -> float:
        """Uniform float in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def sample(self, n: int, k: int) -> list[int]:
        """k distinct indices from range(n), in draw order (partial Fisher-Yates)."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot draw {k} of {n} without replacement")
        pool = list(range(n))
        for i in range(k):
            j = i + self.randbelow(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]

    def choices(self, n: int, k: int) -> list[int]:
        """k indices from range(n) with replacement."""
        return [self.randbelow(n) for _ in range(k)]
