"""Deterministic counter-based random number generation.

All sampling in this package (weight init, datasets, latent vectors,
gradient-penalty interpolation points) goes through `SplitMix64` so a run is
fully reproducible from its seed, with no dependency on any host RNG.

Algorithm (splitmix64):
  * the generator's k-th raw output is ``mix64(seed + k * GOLDEN)`` where
    ``GOLDEN = 0x9E3779B97F4B7C15`` and all arithmetic is modulo 2**64;
  * ``mix64(z)`` is the finalizer
    ``z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; z ^= z >> 27;
    z *= 0x94D049BB133111EB; z ^= z >> 31``;
  * uniforms in [0, 1) take the top 53 bits: ``(u64 >> 11) * 2**-53``;
  * normals use the Box-Muller transform on consecutive uniform pairs
    (u1, u2), u1 mapped to (0, 1]:
    ``z0 = sqrt(-2 ln u1) cos(2 pi u2)``, ``z1 = sqrt(-2 ln u1) sin(2 pi u2)``.

Because the state after k draws is just ``seed + k * GOLDEN``, blocks of
outputs are computed vectorized without changing the stream.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4B7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer on a uint64 array (wrapping arithmetic)."""
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def derive_seed(seed: int, *tags: str) -> int:
    """Derive an independent child seed from `seed` and a path of string tags.

    Folding each tag byte through the splitmix mixer keeps child streams
    decorrelated from the parent and from each other.
    """
    h = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    with np.errstate(over="ignore"):
        for tag in tags:
            for b in tag.encode("utf-8"):
                h = _mix64(np.uint64(h) + _GOLDEN * np.uint64(b + 1))
    return int(h)


class SplitMix64:
    """Seeded splitmix64 stream with vectorized uniform/normal sampling."""

    def __init__(self, seed: int):
        self._seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self._count = 0

    def next_u64(self) -> int:
        return int(self._raw(1)[0])

    def _raw(self, n: int) -> np.ndarray:
        ks = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
        self._count += n
        with np.errstate(over="ignore"):
            return _mix64(self._seed + _GOLDEN * ks)

    def uniform(self, shape: tuple[int, ...] | int = ()) -> np.ndarray:
        """Uniform float64 in [0, 1), shaped `shape`."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * (2.0**-53)
        return u.reshape(shape) if shape else u[0]

    def normal(
        self,
        shape: tuple[int, ...] | int = (),
        mean: float = 0.0,
        std: float = 1.0,
    ) -> np.ndarray:
        """Normal(mean, std) float64 samples via Box-Muller pairs."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        pairs = (n + 1) // 2
        u = self.uniform((2 * pairs,))
        u1 = 1.0 - u[:pairs]  # (0, 1]: keeps log() finite
        u2 = u[pairs:]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        out = mean + std * z[:n]
        return out.reshape(shape) if shape else out[0]

    def integers(self, upper: int, shape: tuple[int, ...] | int = ()) -> np.ndarray:
        """Integers in [0, upper) by scaling uniforms (bias < 2**-53 per draw)."""
        if upper <= 0:
            raise ValueError("upper must be positive")
        u = self.uniform(shape)
        return np.minimum((u * upper).astype(np.int64), upper - 1)
