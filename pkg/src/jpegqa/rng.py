"""Deterministic PRNG used everywhere the toolkit needs randomness.

A splitmix64 stream is small enough to specify completely, so crops,
dataset manifests, rater simulations and weight init all reproduce
bit-exactly from a 64-bit seed, independent of platform or numpy version.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *keys: int | str) -> int:
    """Derive an independent child seed from a master seed and salt keys.

    String keys are hashed with FNV-1a so per-item streams (one per
    reference image, one per pair, ...) do not depend on iteration order.
    """
    state = _mix(seed & _MASK64)
    for key in keys:
        if isinstance(key, str):
            h = 0xCBF29CE484222325
            for byte in key.encode("utf-8"):
                h = ((h ^ byte) * 0x100000001B3) & _MASK64
            key = h
        state = _mix(((state ^ (key & _MASK64)) + _GOLDEN) & _MASK64)
    return state


class SplitMix64:
    """splitmix64 generator (Steele et al.); state advances by the golden gamma."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK64
        return _mix(self.state)

    def bounded(self, n: int) -> int:
        """Uniform integer in [0, n).  Plain modulo: bias is < n/2**64."""
        if n <= 0:
            raise ValueError(f"bounded() needs n >= 1, got {n}")
        return self.next_u64() % n

    def uniform(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def fill_u64(self, n: int) -> np.ndarray:
        """Vectorized batch equal to n successive next_u64() calls."""
        start = np.uint64(self.state)
        idx = np.arange(1, n + 1, dtype=np.uint64)
        z = start + idx * np.uint64(_GOLDEN)
        self.state = int(z[-1]) if n else self.state
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))

    def fill_uniform(self, n: int) -> np.ndarray:
        """Vectorized batch of uniforms in [0, 1), float64."""
        return (self.fill_u64(n) >> np.uint64(11)) * 2.0**-53
