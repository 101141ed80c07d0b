"""Portable seeded random streams.

Every random decision in the package (writer splits, reference picks, batch
order, augmentation parameters) goes through :class:`Lcg64` so results are
identical across platforms and library versions.

The generator is the 64-bit linear congruential generator with Knuth's MMIX
constants::

    state <- (6364136223846793005 * state + 1442695040888963407) mod 2**64

Only the high bits of the state are used for output, since the low bits of a
power-of-two LCG have short periods. Seeds are scrambled with the SplitMix64
finalizer before use, and :func:`derive_seed` builds independent substreams
from a parent seed plus a tuple of integer keys.
"""

from __future__ import annotations

from typing import MutableSequence, Sequence, TypeVar

T = TypeVar("T")

MASK64 = (1 << 64) - 1
LCG_MULTIPLIER = 6364136223846793005
LCG_INCREMENT = 1442695040888963407


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def derive_seed(seed: int, *keys: int) -> int:
    """Return a 64-bit seed for the substream ``keys`` of ``seed``."""
    h = splitmix64(seed & MASK64)
    for k in keys:
        h = splitmix64(h ^ (k & MASK64))
    return h


class Lcg64:
    def __init__(self, seed: int):
        self.state = splitmix64(seed & MASK64)

    def next_u64(self) -> int:
        self.state = (LCG_MULTIPLIER * self.state + LCG_INCREMENT) & MASK64
        return self.state

    def next_u32(self) -> int:
        return self.next_u64() >> 32

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection on the top 32 bits."""
        if n <= 0:
            raise ValueError("n must be positive")
        if n > 1 << 32:
            raise ValueError("n too large")
        limit = (1 << 32) - ((1 << 32) % n)
        while True:
            r = self.next_u32()
            if r < limit:
                return r % n

    def shuffle(self, items: MutableSequence[T]) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample(self, items: Sequence[T], k: int) -> list[T]:
        if k > len(items):
            raise ValueError("sample larger than population")
        pool = list(items)
        self.shuffle(pool)
        return pool[:k]
