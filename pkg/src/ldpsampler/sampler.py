"""Seeded private samplers.

Randomness comes from :class:`RandomStream`: uniform variate ``k`` of a stream
with seed ``s`` is the ``k``-th value of
``numpy.random.Generator(numpy.random.Philox(key=s)).random()``. Philox is a
counter-based generator, so results are stable across runs and platforms for
a fixed numpy bit-stream.

Child streams for parallel work use the seed
``blake2b(pack('<QQ', seed, index), digest_size=8)`` read little-endian.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

from ldpsampler.core import Distribution, _as_probs, validate_distribution
from ldpsampler.exceptions import DimensionMismatch
from ldpsampler.mechanism import MechanismBundle, apply_kernel
from ldpsampler.mollifier import project

UINT64_MAX = 2**64 - 1


class RandomStream:
    """A single-owner stream of uniform variates on [0, 1)."""

    def __init__(self, seed: int = 0, position: int = 0):
        seed = int(seed)
        if not 0 <= seed <= UINT64_MAX:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        if position < 0:
            raise ValueError("position must be >= 0")
        self.seed = seed
        self.position = 0
        self._gen = np.random.Generator(np.random.Philox(key=seed))
        if position:
            self.uniform(position)

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, position={self.position})"

    def uniform(self, size=None):
        """Draw one variate (``size=None``) or an array of ``size`` variates."""
        if size is None:
            self.position += 1
            return float(self._gen.random())
        out = self._gen.random(size)
        self.position += int(np.prod(size))
        return out

    def split(self, index: int) -> "RandomStream":
        digest = hashlib.blake2b(
            struct.pack("<QQ", self.seed, int(index)), digest_size=8
        ).digest()
        return RandomStream(int.from_bytes(digest, "little"))


def inverse_cdf(probs, u):
    """Map uniform variate(s) ``u`` to indices by inverting the CDF.

    A variate exactly on a cumulative boundary goes to the higher index;
    zero-mass indices are never returned.
    """
    probs = _as_probs(probs)
    cdf = np.cumsum(probs)
    idx = np.searchsorted(cdf, u, side="right")
    # rounding can leave cdf[-1] a hair under 1
    last = int(np.flatnonzero(probs > 0)[-1])
    idx = np.minimum(idx, last)
    if np.ndim(idx) == 0:
        return int(idx)
    return idx


def sample_index(dist, rng: RandomStream) -> int:
    """Draw one index from ``dist``, consuming exactly one variate."""
    probs = validate_distribution(dist).probs
    return inverse_cdf(probs, rng.uniform())


def sample_indices(dist, rng: RandomStream, count: int) -> np.ndarray:
    """``count`` independent draws; identical to ``count`` calls of :func:`sample_index`."""
    probs = validate_distribution(dist).probs
    return np.asarray(inverse_cdf(probs, rng.uniform(count)), dtype=np.int64)


def optimal_sampling_distribution(p, bundle: MechanismBundle) -> Distribution:
    p = validate_distribution(p)
    if p.n != bundle.n:
        raise DimensionMismatch(f"p has {p.n} entries, mechanism has {bundle.n}")
    return apply_kernel(p, bundle.kernel)


def private_sample_optimal(p, bundle: MechanismBundle, rng: RandomStream) -> int:
    """Release one symbol distributed as ``pK`` for the bundle's kernel."""
    return sample_index(optimal_sampling_distribution(p, bundle), rng)


def private_sample_mollifier(p, q, epsilon: float, divergence: str, rng: RandomStream) -> int:
    """Release one symbol from the projection of ``p`` onto ``M(eps, q)``."""
    return sample_index(project(p, q, epsilon, divergence).projected, rng)
