"""Seeded pseudo-random stream: splitmix64 for bits, Box-Muller for normals.

The generator is counter based. Drawing ``n`` raw words advances the state
by ``n * GAMMA`` (mod 2**64), so block draws are vectorised with numpy and
still replay bit-identically against a one-at-a-time reference.

Conventions (fixed, so any implementation reproduces the stream):

* uniform:  ``(word >> 11) * 2**-53`` in [0, 1)
* normal:   pairs of words ``(u1, u2)``; ``r = sqrt(-2 ln(1 - u1))``,
            emits ``r cos(2 pi u2), r sin(2 pi u2)``; an odd trailing value
            is dropped
* categorical: one uniform per draw, inverted through the cumulative sum
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def splitmix64(state: int) -> tuple[int, int]:
    """Scalar reference step. Returns ``(word, new_state)``."""
    state = (state + GAMMA) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31), state


def _words(state: int, n: int) -> tuple[np.ndarray, int]:
    counters = np.arange(1, n + 1, dtype=np.uint64)
    z = np.uint64(state) + counters * np.uint64(GAMMA)
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    z = z ^ (z >> np.uint64(31))
    return z, (state + n * GAMMA) & MASK64


class Rng:
    """Mutable wrapper threading a splitmix64 state through draws."""

    def __init__(self, seed: int = 0):
        self.state = int(seed) & MASK64

    def __repr__(self) -> str:
        return f"Rng(state={self.state:#018x})"

    def words(self, n: int) -> np.ndarray:
        out, self.state = _words(self.state, int(n))
        return out

    def uniform(self, size=None) -> np.ndarray | float:
        n = 1 if size is None else int(np.prod(size))
        u = (self.words(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return float(u[0]) if size is None else u.reshape(size)

    def normal(self, size=None) -> np.ndarray | float:
        n = 1 if size is None else int(np.prod(size))
        m = (n + 1) // 2
        u = (self.words(2 * m) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        u1, u2 = u[0::2], u[1::2]
        r = np.sqrt(-2.0 * np.log1p(-u1))
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        z = z[:n]
        return float(z[0]) if size is None else z.reshape(size)

    def categorical(self, p, size=None) -> np.ndarray | int:
        p = np.asarray(p, dtype=np.float64)
        if p.ndim != 1 or p.size == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"invalid categorical probabilities {p.tolist()}")
        u = self.uniform(1 if size is None else size)
        idx = np.searchsorted(np.cumsum(p), u, side="right")
        idx = np.minimum(idx, p.size - 1)
        # never land on a zero-probability trailing category
        nz = np.flatnonzero(p)
        idx = np.minimum(idx, nz[-1])
        return int(np.ravel(idx)[0]) if size is None else idx

    def integers(self, high: int, size=None) -> np.ndarray | int:
        """Uniform integers in [0, high)."""
        u = self.uniform(1 if size is None else size)
        out = np.minimum((np.asarray(u) * high).astype(np.int64), high - 1)
        return int(np.ravel(out)[0]) if size is None else out

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")

    def spawn(self, key: int) -> "Rng":
        """Independent child stream keyed by an integer, state untouched."""
        word, _ = splitmix64((self.state ^ (int(key) * 0xD1B54A32D192ED03)) & MASK64)
        return Rng(word)


def rng_draw(state: int, kind: str, n: int = 1, p=None):
    """Functional form: returns ``(samples, new_state)``."""
    rng = Rng(state)
    if kind == "uniform":
        out = rng.uniform(n)
    elif kind == "normal":
        out = rng.normal(n)
    elif kind == "categorical":
        if p is None:
            raise ValueError("categorical draw needs probabilities p")
        out = rng.categorical(p, n)
    else:
        raise ValueError(f"unknown draw kind {kind!r}")
    return out, rng.state
