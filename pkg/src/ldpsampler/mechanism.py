"""Minimax-optimal LDP mechanisms that leave a public prior invariant.

The optimal kernel is built recursively on the increasingly sorted prior:
the smallest symbol gets diagonal ``e^eps q_min / d`` with
``d = e^eps q_min + 1 - q_min``, the rest of its column ``q_min / d``, its row
``q_j / d``, and the lower-right block is the optimal kernel of the
renormalised tail scaled by ``m = 1 - q_min / d``. Two symbols are handled by
a closed form. The same kernel is optimal for every f-divergence.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Optional

import numpy as np

from ldpsampler.core import (
    Distribution,
    FDivergence,
    _as_probs,
    check_epsilon,
    sort_with_permutation,
    validate_distribution,
)
from ldpsampler.exceptions import (
    AlphaOutOfRange,
    DimensionMismatch,
    InternalError,
    InvalidKernel,
    QminOutOfRange,
    TooShort,
)

ROW_SUM_TOL = 1e-9


@dataclasses.dataclass(frozen=True, eq=False)
class Kernel:
    """Row-stochastic square matrix; ``entries[i, j] = P(output j | input i)``."""

    entries: np.ndarray

    def __post_init__(self):
        arr = np.array(self.entries, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise InvalidKernel(f"kernel must be square, got shape {arr.shape}")
        if arr.shape[0] < 2:
            raise TooShort("kernel dimension must be >= 2")
        if not np.all(np.isfinite(arr)):
            raise InvalidKernel("kernel entries must be finite")
        if np.any(arr < 0):
            raise InvalidKernel("kernel entries must be nonnegative")
        row_err = np.max(np.abs(arr.sum(axis=1) - 1.0))
        if row_err > ROW_SUM_TOL:
            raise InvalidKernel(f"rows must sum to 1 (max deviation {row_err:.3g})")
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def diagonal(self) -> np.ndarray:
        return np.diagonal(self.entries)

    @property
    def min_diagonal(self) -> float:
        return float(self.diagonal.min())

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    def __repr__(self):
        return f"Kernel(n={self.n})"

    @classmethod
    def identity(cls, n: int) -> "Kernel":
        return cls(np.eye(n))

    def conjugate(self, perm) -> "Kernel":
        """Return the kernel ``K'[i, j] = K[perm[i], perm[j]]``."""
        perm = np.asarray(perm)
        return Kernel(self.entries[np.ix_(perm, perm)])


@dataclasses.dataclass(frozen=True, eq=False)
class MechanismBundle:
    """An optimal kernel together with the prior and budget that produced it.

    ``kernel`` is indexed like ``prior``; ``sorted_kernel`` is indexed like
    the sorted prior, and ``kernel = sorted_kernel.conjugate(perm)``.
    """

    kernel: Kernel
    sorted_kernel: Kernel
    perm: np.ndarray
    prior: Distribution
    epsilon: float

    @property
    def n(self) -> int:
        return self.kernel.n

    def to_dict(self) -> dict:
        return kernel_to_dict(self.kernel, self.prior, self.epsilon)

    @classmethod
    def from_dict(cls, data: dict) -> "MechanismBundle":
        kernel, prior, epsilon = kernel_from_dict(data)
        if prior is None or epsilon is None:
            raise InvalidKernel("a bundle needs both 'prior' and 'epsilon'")
        prior = validate_distribution(prior, require_positive=True)
        if prior.n != kernel.n:
            raise DimensionMismatch("prior and kernel dimensions differ")
        _, perm = sort_with_permutation(prior)
        inverse = np.argsort(perm)
        return cls(kernel, kernel.conjugate(inverse), perm, prior, epsilon)


# Formulas below are written in w = e^{-eps} in [0, 1] rather than e^eps, so
# very large budgets underflow gracefully (w -> 0, K -> identity) instead of
# overflowing.


def _binary_entries(alpha: float, w: float) -> np.ndarray:
    d = alpha + (1.0 - alpha) * w
    return np.array(
        [
            [alpha, (1.0 - alpha) * w],
            [alpha * w, alpha * (1.0 - w) + (1.0 - alpha) * w],
        ]
    ) / d


def binary_optimal(alpha: float, epsilon: float) -> Kernel:
    """Optimal 2x2 kernel for the prior ``(alpha, 1 - alpha)``, ``alpha <= 1/2``."""
    eps = check_epsilon(epsilon)
    if not (0 < alpha <= 0.5):
        raise AlphaOutOfRange(f"alpha must lie in (0, 1/2], got {alpha!r}")
    return Kernel(_binary_entries(float(alpha), math.exp(-eps)))


def randomized_response(n: int, epsilon: float) -> Kernel:
    """n-ary randomized response: keep w.p. ``e^eps / (e^eps + n - 1)``."""
    eps = check_epsilon(epsilon)
    if n < 2:
        raise TooShort(f"n must be >= 2, got {n}")
    w = math.exp(-eps)
    entries = np.full((n, n), w / (1.0 + (n - 1) * w))
    np.fill_diagonal(entries, 1.0 / (1.0 + (n - 1) * w))
    return Kernel(entries)


def sorted_optimal_entries(sorted_q: np.ndarray, epsilon: float) -> np.ndarray:
    """Optimal kernel entries for an increasingly sorted, positive prior.

    Unrolls the recursion: level ``k`` fills row ``k`` and column ``k`` from
    the diagonal onwards, carrying the product of the block scales ``m`` from
    the levels above, so every entry is written once (O(n^2)).
    """
    s = np.asarray(sorted_q, dtype=np.float64)
    n = s.shape[0]
    w = math.exp(-epsilon)
    out = np.zeros((n, n))
    # tails[k] = sum(s[k:]), the normaliser of the level-k tail prior
    tails = np.cumsum(s[::-1])[::-1]
    scale = 1.0
    for k in range(n - 2):
        tail = s[k:] / tails[k]
        qmin = tail[0]
        d = qmin + (1.0 - qmin) * w
        out[k, k] = scale * qmin / d
        out[k + 1 :, k] = scale * qmin * w / d
        out[k, k + 1 :] = scale * tail[1:] * w / d
        scale *= 1.0 - qmin * w / d
    alpha = s[n - 2] / tails[n - 2]
    out[n - 2 :, n - 2 :] = scale * _binary_entries(alpha, w)
    return out


def sorted_optimal_entries_recursive(sorted_q: np.ndarray, epsilon: float) -> np.ndarray:
    """Direct transcription of the recursive construction (O(n^3)).

    Kept as the reference the O(n^2) path is tested against.
    """
    q = np.asarray(sorted_q, dtype=np.float64)
    n = q.shape[0]
    w = math.exp(-epsilon)
    if n == 2:
        return _binary_entries(q[0], w)
    out = np.zeros((n, n))
    qmin = q[0]
    d = qmin + (1.0 - qmin) * w
    out[0, 0] = qmin / d
    for i in range(1, n):
        out[i, 0] = qmin * w / d
    q_bar = q[1:] / np.sum(q[1:])
    sub = sorted_optimal_entries_recursive(q_bar, epsilon)
    m = 1.0 - qmin * w / d
    out[1:, 1:] = m * sub
    for j in range(1, n):
        out[0, j] = q[j] * w / d
    return out


def build_optimal(q, epsilon: float) -> MechanismBundle:
    """Construct the minimax-optimal ``epsilon``-LDP kernel with ``qK = q``.

    ``q`` may be in any order; it is sorted internally and the result is
    conjugated back so ``bundle.kernel`` is indexed like ``q``.

    Raises:
      ZeroEntry, TooShort, NotNormalized: ``q`` is not a positive distribution.
      NegativeEpsilon, NonFiniteEpsilon: bad budget.
    """
    eps = check_epsilon(epsilon)
    prior = validate_distribution(q, require_positive=True)
    sorted_q, perm = sort_with_permutation(prior)
    sorted_kernel = Kernel(sorted_optimal_entries(sorted_q.probs, eps))
    kernel = sorted_kernel.conjugate(perm)
    if __debug__:
        inv = verify_invariance(kernel, prior, tol=1e-9)
        if not inv.passed:
            raise InternalError(f"qK != q (deviation {inv.max_abs_deviation:.3g})")
    return MechanismBundle(kernel, sorted_kernel, perm, prior, eps)


def optimal_utility(qmin: float, epsilon: float, f: FDivergence) -> float:
    """Minimax value of the worst-case ``D_f(p || pK)`` over invariant eps-LDP K.

    Depends on the prior only through its smallest mass ``qmin``. For TV it
    reduces to ``(1 - qmin) / (e^eps qmin + 1 - qmin)``.
    """
    eps = check_epsilon(epsilon)
    if not (0 < qmin <= 1):
        raise QminOutOfRange(f"qmin must lie in (0, 1], got {qmin!r}")
    return _dirac_value(_diag_bound(qmin, eps), f)


def _diag_bound(q, epsilon):
    w = math.exp(-epsilon)
    return q / (q + (1.0 - q) * w)


def _dirac_value(k_min: float, f: FDivergence) -> float:
    # f(0) (1 - k) + k f(1/k), with the limits at k = 0 and the 0*inf = 0 rule
    if k_min == 0:
        return f.f0 + f.slope_at_infinity
    return f.weighted(1.0 - k_min, 0.0) + f.weighted(k_min, 1.0 / k_min)


def worst_case_divergence(kernel: Kernel, f: FDivergence) -> float:
    """``sup_p D_f(p || pK)``, attained at a point mass on the smallest diagonal."""
    return _dirac_value(kernel.min_diagonal, f)


def diagonal_upper_bound(q, epsilon: float) -> np.ndarray:
    """Largest diagonal entry ``K_ii`` any invariant eps-LDP kernel can have."""
    eps = check_epsilon(epsilon)
    prior = validate_distribution(q, require_positive=True)
    return _diag_bound(prior.probs, eps)


@dataclasses.dataclass(frozen=True)
class LDPReport:
    max_log_ratio: float
    epsilon: float
    passed: bool


@dataclasses.dataclass(frozen=True)
class InvarianceReport:
    max_abs_deviation: float
    passed: bool


def column_log_ratios(kernel: Kernel) -> np.ndarray:
    """``log(max_i K_ij / min_i K_ij)`` for every column j."""
    k = kernel.entries
    hi = k.max(axis=0)
    lo = k.min(axis=0)
    out = np.zeros(k.shape[1])
    pos = lo > 0
    out[pos] = np.log(hi[pos] / lo[pos])
    out[(lo == 0) & (hi > 0)] = math.inf
    return out


def verify_ldp(kernel: Kernel, epsilon: float, tol: float = 1e-9) -> LDPReport:
    """Check the eps-LDP ratio bound column by column.

    Every ``pK(j)`` is a convex combination of column j, so the worst ratio
    over input distributions is the column's max/min.
    """
    eps = check_epsilon(epsilon)
    worst = float(column_log_ratios(kernel).max())
    return LDPReport(worst, eps, bool(worst <= eps * (1.0 + tol) + tol))


def verify_invariance(kernel: Kernel, q, tol: float = 1e-9) -> InvarianceReport:
    probs = _as_probs(q)
    if probs.shape[0] != kernel.n:
        raise DimensionMismatch(f"prior has {probs.shape[0]} entries, kernel is {kernel.n}x{kernel.n}")
    dev = float(np.max(np.abs(probs @ kernel.entries - probs)))
    return InvarianceReport(dev, bool(dev <= tol))


def apply_kernel(p, kernel: Kernel) -> Distribution:
    """The sampling distribution ``pK``."""
    probs = validate_distribution(p).probs
    if probs.shape[0] != kernel.n:
        raise DimensionMismatch(f"p has {probs.shape[0]} entries, kernel is {kernel.n}x{kernel.n}")
    out = probs @ kernel.entries
    return Distribution(out / out.sum())


def kernel_to_dict(kernel: Kernel, prior=None, epsilon: Optional[float] = None) -> dict:
    return {
        "n": kernel.n,
        "epsilon": None if epsilon is None else float(epsilon),
        "prior": None if prior is None else _as_probs(prior).tolist(),
        "kernel": kernel.entries.tolist(),
    }


def kernel_from_dict(data: dict):
    """Parse the kernel JSON object; returns ``(kernel, prior, epsilon)``.

    ``prior`` and ``epsilon`` are ``None`` when absent.
    """
    try:
        kernel = Kernel(np.asarray(data["kernel"], dtype=np.float64))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InvalidKernel):
            raise
        raise InvalidKernel(f"malformed kernel object: {exc}") from exc
    if "n" in data and int(data["n"]) != kernel.n:
        raise DimensionMismatch(f"'n' is {data['n']} but kernel is {kernel.n}x{kernel.n}")
    prior = data.get("prior")
    if prior is not None:
        prior = validate_distribution(prior)
        if prior.n != kernel.n:
            raise DimensionMismatch("prior and kernel dimensions differ")
    epsilon = data.get("epsilon")
    if epsilon is not None:
        epsilon = check_epsilon(epsilon)
    return kernel, prior, epsilon
