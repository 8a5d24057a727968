"""Deterministic pseudo-randomness used everywhere seeds appear.

All sampling in the pipeline (split shuffles, the random retrieval scorer,
the deterministic embedding provider) goes through the splitmix64 generator
below instead of the stdlib Mersenne Twister, so that identical seeds give
bit-identical behaviour across processes, platforms, and Python versions.

splitmix64 is the public-domain generator from Vigna's xorshift suite; the
64-bit FNV-1a hash turns arbitrary byte strings (file contents, case ids,
category names) into seed material.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns (output, next_state)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31), state


class SplitMix64:
    """Stateful splitmix64 stream with the sampling helpers the pipeline needs."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    @classmethod
    def for_key(cls, seed: int, key: str) -> "SplitMix64":
        """Derive an independent stream from (seed, string key).

        Used for per-category split shuffles and per-query scorer draws, so
        concurrent processing cannot reorder anyone's random sequence.
        """
        return cls((seed & _MASK64) ^ fnv1a64(key.encode("utf-8")))

    def next_u64(self) -> int:
        out, self._state = splitmix64(self._state)
        return out

    def next_float(self) -> float:
        """Uniform in [-1.0, 1.0) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (2.0 ** -52) - 1.0

    def next_below(self, n: int) -> int:
        """Uniform integer in [0, n) via multiply-shift range reduction."""
        if n <= 0:
            raise ValueError("n must be positive")
        return (self.next_u64() * n) >> 64

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_below(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample_distinct(self, items: list, k: int) -> list:
        """First k elements of a partial Fisher-Yates shuffle (distinct draws)."""
        if k > len(items):
            raise ValueError(f"cannot draw {k} distinct items from {len(items)}")
        pool = list(items)
        for i in range(k):
            j = i + self.next_below(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]
