"""Deterministic, derivable random streams.

A RandomSource is identified by a (seed, stream) pair of 64-bit integers.
Identical pairs always produce identical draw sequences; `derive` mixes
string/int labels into a new stream id so independent parts of a run (each
child's mutation, each generation's episode seeds, ...) get their own stream
without any shared mutable state.  Drawing is the only mutating operation.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _mix(stream: int, parts: tuple) -> int:
    """Stable 64-bit hash of (stream, *parts); labels may be str or int."""
    h = hashlib.blake2b(digest_size=8)
    h.update(stream.to_bytes(8, "little"))
    for p in parts:
        if isinstance(p, str):
            h.update(b"s" + p.encode("utf-8") + b"\x00")
        elif isinstance(p, (int, np.integer)):
            h.update(b"i" + int(p).to_bytes(16, "little", signed=True))
        else:
            raise TypeError(f"derive labels must be str or int, got {type(p).__name__}")
    return int.from_bytes(h.digest(), "little")


class RandomSource:
    """Seedable random stream backed by numpy's PCG64.

    The generator is created lazily; copies of the same (seed, stream) that
    have drawn the same number of values are in identical states.
    """

    __slots__ = ("seed", "stream", "_gen")

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        self._gen = None

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence((self.seed, self.stream))
            self._gen = np.random.Generator(np.random.PCG64(ss))
        return self._gen

    def derive(self, *parts) -> "RandomSource":
        """Child source with a stream id derived from this one plus labels."""
        return RandomSource(self.seed, _mix(self.stream, parts))

    def seq_seed(self, index: int) -> int:
        """Stable 64-bit value for position `index`, independent of draws."""
        return _mix(self.stream, ("seq", index)) ^ self.seed

    # draw helpers ---------------------------------------------------------

    def standard_normal(self, size=None):
        return self.generator.standard_normal(size)

    def uniform(self, low, high, size=None):
        return self.generator.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size=size)

    def random(self, size=None):
        return self.generator.random(size)

    def __repr__(self):
        return f"RandomSource(seed={self.seed}, stream={self.stream})"
