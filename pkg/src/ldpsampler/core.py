"""Probability-vector primitives and f-divergences.

A :class:`Distribution` is an immutable, validated probability vector. An
:class:`FDivergence` bundles a convex generator ``f`` with its right limit at
zero, ``f(0+)``, and its asymptotic slope ``lim f(t)/t`` as ``t -> inf``. The
two limits make ``D_f(p || q)`` well defined on the boundary of the simplex.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from typing import Callable

import numpy as np

from ldpsampler.exceptions import (
    DimensionMismatch,
    InvalidDivergence,
    NegativeEntry,
    NegativeEpsilon,
    NonFiniteEpsilon,
    NotNormalized,
    TooShort,
    ZeroEntry,
)

NORMALIZATION_TOL = 1e-9


def _frozen(arr):
    arr = np.array(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclasses.dataclass(frozen=True, eq=False)
class Distribution:
    """A finite probability vector.

    Use :func:`validate_distribution` to build one from raw numbers; the
    constructor trusts its input.
    """

    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _frozen(self.probs))

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    @property
    def min(self) -> float:
        return float(self.probs.min())

    def is_positive(self) -> bool:
        return bool(np.all(self.probs > 0))

    def __len__(self):
        return self.n

    def __array__(self, dtype=None, copy=None):
        return self.probs if dtype is None else self.probs.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, Distribution):
            return NotImplemented
        return np.array_equal(self.probs, other.probs)

    def __repr__(self):
        return f"Distribution({self.probs.tolist()!r})"

    @classmethod
    def uniform(cls, n: int) -> "Distribution":
        if n < 2:
            raise TooShort(f"support size must be >= 2, got {n}")
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def dirac(cls, n: int, index: int) -> "Distribution":
        probs = np.zeros(n)
        probs[index] = 1.0
        return cls(probs)


def validate_distribution(probs, require_positive: bool = False) -> Distribution:
    """Check ``probs`` against the simplex and wrap it.

    Args:
      probs: a 1-d sequence of reals, or an existing :class:`Distribution`.
      require_positive: reject zero entries. Public priors need this.

    Raises:
      TooShort, NegativeEntry, NotNormalized, ZeroEntry.
    """
    if isinstance(probs, Distribution):
        arr = probs.probs
    else:
        arr = np.asarray(probs, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionMismatch(f"expected a 1-d vector, got shape {arr.shape}")
    if arr.shape[0] < 2:
        raise TooShort(f"support size must be >= 2, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise NotNormalized("entries must be finite")
    if np.any(arr < 0):
        raise NegativeEntry(f"negative entry at index {int(np.argmin(arr))}")
    total = math.fsum(arr)
    if abs(total - 1.0) > NORMALIZATION_TOL:
        raise NotNormalized(f"entries sum to {total!r}, not 1")
    if require_positive and np.any(arr == 0):
        raise ZeroEntry(f"zero entry at index {int(np.argmin(arr))}")
    if isinstance(probs, Distribution):
        return probs
    return Distribution(arr)


class DivergenceKind(enum.Enum):
    TV = "tv"
    KL = "kl"
    CHI_SQUARE = "chi_square"
    SQUARED_HELLINGER = "squared_hellinger"
    CUSTOM = "custom"


def _tv(t):
    return 0.5 * np.abs(t - 1.0)


def _kl(t):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(t > 0, t * np.log(np.where(t > 0, t, 1.0)), 0.0)


def _chi_square(t):
    return (t - 1.0) ** 2


def _squared_hellinger(t):
    return (np.sqrt(t) - 1.0) ** 2


@dataclasses.dataclass(frozen=True)
class FDivergence:
    """Generator of an f-divergence.

    Attributes:
      kind: which named divergence this is, or ``CUSTOM``.
      f: vectorised evaluator of the generator on ``t > 0``.
      f0: the right limit ``f(0+)``; may be ``math.inf``.
      slope_at_infinity: ``lim_{t->inf} f(t)/t``, used when the reference
        measure has a zero where the other one does not; may be ``math.inf``.
    """

    kind: DivergenceKind
    f: Callable = dataclasses.field(repr=False)
    f0: float
    slope_at_infinity: float = math.inf

    def __post_init__(self):
        if not (self.f0 >= 0):
            raise InvalidDivergence(f"f(0+) must be >= 0, got {self.f0}")
        at_one = float(self.evaluate(np.array([1.0]))[0])
        if abs(at_one) > 1e-12:
            raise InvalidDivergence(f"f(1) must be 0, got {at_one}")

    @classmethod
    def tv(cls) -> "FDivergence":
        return cls(DivergenceKind.TV, _tv, 0.5, 0.5)

    @classmethod
    def kl(cls) -> "FDivergence":
        return cls(DivergenceKind.KL, _kl, 0.0, math.inf)

    @classmethod
    def chi_square(cls) -> "FDivergence":
        return cls(DivergenceKind.CHI_SQUARE, _chi_square, 1.0, math.inf)

    @classmethod
    def squared_hellinger(cls) -> "FDivergence":
        return cls(DivergenceKind.SQUARED_HELLINGER, _squared_hellinger, 1.0, 1.0)

    @classmethod
    def custom(
        cls,
        f: Callable[[float], float],
        f0: float,
        slope_at_infinity: float = math.inf,
    ) -> "FDivergence":
        """Wrap a user generator. ``f`` must be convex on (0, inf) with f(1) = 0.

        ``f0`` is required; the library never extrapolates ``f(0+)``.
        """
        vec = np.vectorize(f, otypes=[np.float64])
        return cls(DivergenceKind.CUSTOM, vec, float(f0), float(slope_at_infinity))

    @classmethod
    def from_name(cls, name: str) -> "FDivergence":
        key = name.strip().lower().replace("-", "_")
        factories = {
            "tv": cls.tv,
            "kl": cls.kl,
            "chi_square": cls.chi_square,
            "chi2": cls.chi_square,
            "squared_hellinger": cls.squared_hellinger,
            "hellinger": cls.squared_hellinger,
        }
        if key not in factories:
            raise InvalidDivergence(f"unknown divergence {name!r}")
        return factories[key]()

    def evaluate(self, t) -> np.ndarray:
        return np.asarray(self.f(np.asarray(t, dtype=np.float64)), dtype=np.float64)

    def weighted(self, weight: float, t: float) -> float:
        """``weight * f(t)`` with the ``0 * f = 0`` convention, for scalar t >= 0.

        ``t == 0`` uses ``f0`` and ``t == inf`` uses the slope at infinity
        (``weight * f(t)`` with ``weight * t`` held fixed is not expressible
        here, so callers handle that case themselves).
        """
        if weight == 0:
            return 0.0
        if t == 0:
            return weight * self.f0
        return weight * float(self.evaluate(np.array([t]))[0])


def _as_probs(x) -> np.ndarray:
    if isinstance(x, Distribution):
        return x.probs
    return np.asarray(x, dtype=np.float64)


def f_divergence(f: FDivergence, p, q) -> float:
    """``D_f(p || q) = sum_x q(x) f(p(x) / q(x))``.

    Conventions: ``0 * f(0/0) = 0``; ``q(x) f(0) = q(x) f(0+)``; where
    ``q(x) = 0 < p(x)`` the term is ``p(x)`` times the asymptotic slope of
    ``f``, which is ``+inf`` for KL and chi-square and finite for TV and
    squared Hellinger.
    """
    p = _as_probs(p)
    q = _as_probs(q)
    if p.shape != q.shape:
        raise DimensionMismatch(f"shapes differ: {p.shape} vs {q.shape}")
    both = (p > 0) & (q > 0)
    total = 0.0
    if np.any(both):
        total += float(np.sum(q[both] * f.evaluate(p[both] / q[both])))
    only_q = (p == 0) & (q > 0)
    if np.any(only_q):
        if math.isinf(f.f0) and f.f0 > 0:
            return math.inf
        total += float(np.sum(q[only_q])) * f.f0
    only_p = (p > 0) & (q == 0)
    if np.any(only_p):
        if math.isinf(f.slope_at_infinity):
            return math.inf
        total += float(np.sum(p[only_p])) * f.slope_at_infinity
    return total


def tv_distance(p, q) -> float:
    return f_divergence(FDivergence.tv(), p, q)


def kl_divergence(p, q) -> float:
    return f_divergence(FDivergence.kl(), p, q)


def sort_with_permutation(q) -> tuple[Distribution, np.ndarray]:
    """Stable non-decreasing sort of ``q``.

    Returns ``(sorted_q, perm)`` where ``perm[i]`` is the position of original
    index ``i`` in ``sorted_q``, so ``sorted_q.probs[perm] == q``.
    """
    probs = _as_probs(q)
    order = np.argsort(probs, kind="stable")
    perm = np.empty_like(order)
    perm[order] = np.arange(order.shape[0])
    return Distribution(probs[order]), perm


def check_epsilon(epsilon) -> float:
    eps = float(epsilon)
    if math.isnan(eps) or math.isinf(eps):
        raise NonFiniteEpsilon(f"epsilon must be finite, got {epsilon!r}")
    if eps < 0:
        raise NegativeEpsilon(f"epsilon must be >= 0, got {epsilon!r}")
    return eps

