"""Portable pseudo-random streams.

Everything random in this package (task walks, sample points, spout routing,
injected latency) is drawn from splitmix64 so that a seed reproduces the same
bits in any language. Conventions, fixed once and for all:

* the ``i``-th output (0-based) of a stream seeded with ``s`` is
  ``mix(s + (i + 1) * GAMMA)``, so streams are counter based and can be
  vectorised;
* a uniform double is ``(u >> 11) * 2**-53``, i.e. in ``[0, 1)``;
* a standard normal consumes two uniforms ``u1, u2`` and returns
  ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`` (Box-Muller, cosine branch only);
* substreams are keyed by ``derive_seed(seed, tag, index)``.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_INV_2_53 = 1.0 / (1 << 53)


def mix64(z: int) -> int:
    """splitmix64 output finalizer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & MASK64
    return h


def derive_seed(seed: int, tag: str, index: int = 0) -> int:
    """Seed of the substream identified by ``(seed, tag, index)``."""
    h = mix64(seed & MASK64)
    h = mix64(h ^ fnv1a64(tag))
    return mix64(h ^ (index & MASK64))


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Counter-based splitmix64 stream.

    Scalar draws and the ``*_array`` methods share one counter, so mixing
    them is safe and the result does not depend on how draws were batched.
    """

    def __init__(self, seed: int):
        self.seed = seed & MASK64
        self.counter = 0

    @classmethod
    def substream(cls, seed: int, tag: str, index: int = 0) -> "SplitMix64":
        return cls(derive_seed(seed, tag, index))

    def next_u64(self) -> int:
        self.counter += 1
        return mix64(self.seed + self.counter * GAMMA)

    def random(self) -> float:
        return (self.next_u64() >> 11) * _INV_2_53

    def gauss(self) -> float:
        # routed through numpy so scalar and batched draws agree bit for bit
        return float(self.gauss_array(1)[0])

    def randbelow(self, n: int) -> int:
        """Integer in ``[0, n)`` as ``floor(u * n)``."""
        return min(int(self.random() * n), n - 1)

    def u64_array(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            states = np.uint64(self.seed) + idx * np.uint64(GAMMA)
            return _mix64_array(states)

    def random_array(self, n: int) -> np.ndarray:
        return (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def gauss_array(self, n: int) -> np.ndarray:
        u = self.random_array(2 * n)
        u1, u2 = u[0::2], u[1::2]
        return np.sqrt(-2.0 * np.log(1.0 - u1)) * np.cos(2.0 * np.pi * u2)
