"""Seeded splitmix64 generator.

splitmix64 is a counter-based generator: the i-th output of a stream whose
state is ``s`` is ``mix(s + i * GAMMA)`` (all arithmetic mod 2**64).  This
makes bulk draws vectorisable with numpy ``uint64`` arrays while producing
exactly the same stream as the scalar recurrence, on every platform.

Stream discipline: every consumer takes its own named sub-stream via
:meth:`Rng.derive`, e.g. ``rng.derive("init", "mask")`` or
``rng.derive("batch", epoch, index)``.  Consumers therefore never perturb
each other's draws.

Conversions:

* uniform [0, 1): top 53 bits of a draw times 2**-53.
* standard normal: Box-Muller, two uniforms per pair of normals,
  ``u1`` mapped to (0, 1] so the log is finite.
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """splitmix64 finaliser on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
        return z ^ (z >> np.uint64(31))


def _key_hash(key) -> int:
    digest = hashlib.blake2b(repr(key).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class Rng:
    """splitmix64 stream with numpy bulk helpers."""

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def __repr__(self):
        return f"Rng(state=0x{self.state:016x})"

    def derive(self, *keys) -> "Rng":
        """Independent named sub-stream; does not advance ``self``."""
        s = self.state
        for key in keys:
            s = mix64(s ^ _key_hash(key))
        return Rng(s)

    def next_u64(self) -> int:
        self.state = (self.state + GAMMA) & MASK64
        return mix64(self.state)

    def u64(self, n: int) -> np.ndarray:
        """Next ``n`` raw outputs, identical to ``n`` calls of next_u64."""
        n = int(n)
        if n < 0:
            raise ValueError("n must be non-negative")
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = np.uint64(self.state) + steps * np.uint64(GAMMA)
        self.state = (self.state + n * GAMMA) & MASK64
        return _mix64_array(states)

    def random(self, size=None):
        """Uniform floats in [0, 1)."""
        n = 1 if size is None else int(np.prod(size))
        u = (self.u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return float(u[0]) if size is None else u.reshape(size)

    def uniform(self, lo=0.0, hi=1.0, size=None):
        if lo > hi:
            raise ValueError(f"uniform range is empty: lo={lo} > hi={hi}")
        u = self.random(size)
        return lo + (hi - lo) * u

    def integers(self, lo: int, hi: int, size=None):
        """Integers in [lo, hi)."""
        if hi <= lo:
            raise ValueError(f"integer range is empty: [{lo}, {hi})")
        u = self.random(size)
        out = lo + np.floor(np.asarray(u) * (hi - lo)).astype(np.int64)
        out = np.minimum(out, hi - 1)
        return int(out) if size is None else out

    def normal(self, size=None):
        """Standard normal draws (Box-Muller)."""
        n = 1 if size is None else int(np.prod(size))
        pairs = (n + 1) // 2
        u = self.random(2 * pairs)
        u1 = 1.0 - u[:pairs]
        u2 = u[pairs:]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])[:n]
        return float(z[0]) if size is None else z.reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n)."""
        perm = np.arange(n)
        if n > 1:
            u = self.random(n - 1)
            for k, i in enumerate(range(n - 1, 0, -1)):
                j = min(int(u[k] * (i + 1)), i)
                perm[i], perm[j] = perm[j], perm[i]
        return perm
