"""Relative-mollifier baseline: project ``p`` onto the ``e^{eps/2}`` ball around ``q``.

The ball ``M(eps, q)`` holds every distribution whose pointwise ratio to ``q``
lies in ``[e^{-eps/2}, e^{eps/2}]``; any two members are within ``e^eps`` of
each other, so sampling from the projection is an eps-private sampler.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Optional

import numpy as np

from ldpsampler.core import (
    Distribution,
    _as_probs,
    check_epsilon,
    kl_divergence,
    validate_distribution,
)
from ldpsampler.exceptions import BisectionFailure, DimensionMismatch, Infeasible, ZeroEntry

BISECTION_TOL = 1e-12
BISECTION_MAX_ITER = 200


@dataclasses.dataclass(frozen=True)
class ProjectionResult:
    """Outcome of a projection onto the relative mollifier.

    Attributes:
      projected: the projected distribution.
      normalizer: the constant ``C`` of the clipped form ``clip(p / C)`` for
        KL projections; ``None`` for TV, and for KL inputs whose mass cannot
        be absorbed by any finite ``C`` (see :func:`project_kl`).
      achieved_divergence: ``KL(p || projected)`` or ``TV(p, projected)``.
      iterations: bisection steps (KL) or coordinates adjusted (TV).
    """

    projected: Distribution
    normalizer: Optional[float]
    achieved_divergence: float
    iterations: int

    def to_dict(self) -> dict:
        return {
            "projected": self.projected.probs.tolist(),
            "normalizer": self.normalizer,
            "achievedDivergence": self.achieved_divergence,
            "iterations": self.iterations,
        }


def _half_factor(eps: float) -> float:
    """``e^{eps/2}``, saturating to inf instead of overflowing."""
    try:
        return math.exp(eps / 2.0)
    except OverflowError:
        return math.inf


def _prepare(p, q, epsilon):
    eps = check_epsilon(epsilon)
    q = validate_distribution(q, require_positive=True)
    p = validate_distribution(p)
    if p.n != q.n:
        raise DimensionMismatch(f"p has {p.n} entries, q has {q.n}")
    half = _half_factor(eps)
    return p.probs, q.probs, eps, q.probs / half, q.probs * half


def mollifier_bounds(q, epsilon: float) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise lower and upper bounds of ``M(eps, q)``."""
    eps = check_epsilon(epsilon)
    q = validate_distribution(q, require_positive=True).probs
    half = _half_factor(eps)
    return q / half, q * half


def in_mollifier(phat, q, epsilon: float, tol: float = 1e-9) -> bool:
    eps = check_epsilon(epsilon)
    qa = _as_probs(q)
    pa = _as_probs(phat)
    if pa.shape != qa.shape:
        raise DimensionMismatch(f"shapes differ: {pa.shape} vs {qa.shape}")
    if np.any(qa <= 0):
        raise ZeroEntry("reference distribution must be strictly positive")
    if np.any(pa <= 0):
        return False
    worst = float(np.max(np.maximum(qa / pa, pa / qa)))
    return worst <= _half_factor(eps) * (1.0 + tol)


def project_kl(p, q, epsilon: float) -> ProjectionResult:
    """KL information projection ``argmin_{p' in M(eps, q)} KL(p || p')``.

    The minimiser is ``clip(p / C, q e^{-eps/2}, q e^{eps/2})``; ``C`` is
    found by bisection on the non-increasing map ``C -> sum clip(p / C)``.

    When ``p`` has zeros, the map may stay below 1 even as ``C -> 0``. Then
    every coordinate in the support of ``p`` sits at its upper bound and the
    leftover mass is spread over the zeros of ``p`` (which do not affect the
    objective) at a common fraction of their ranges; ``normalizer`` is
    ``None`` in that case.

    Raises:
      ZeroEntry: ``q`` has a zero.
      BisectionFailure: the bracket does not straddle 1 (internal bug).
    """
    p, q, eps, lo, hi = _prepare(p, q, epsilon)

    def mass(c):
        return math.fsum(np.clip(p / c, lo, hi))

    def result(phat, c, iters):
        phat = Distribution(phat / phat.sum())
        return ProjectionResult(phat, c, kl_divergence(p, phat), iters)

    if eps == 0:
        return result(q.copy(), 1.0, 0)
    if abs(mass(1.0) - 1.0) <= BISECTION_TOL:
        return result(np.clip(p, lo, hi), 1.0, 0)

    support = p > 0
    ceiling = math.fsum(hi[support]) + math.fsum(lo[~support])
    if ceiling < 1.0 - BISECTION_TOL:
        phat = np.where(support, hi, lo)
        slack = hi[~support] - lo[~support]
        frac = (1.0 - ceiling) / math.fsum(slack)
        phat[~support] = lo[~support] + frac * slack
        return ProjectionResult(
            Distribution(phat / phat.sum()), None, kl_divergence(p, phat), 0
        )

    c_lo = min(1e-12, float(np.min(p[support] / hi[support])))
    c_hi = float(p.max() * _half_factor(eps) / q.min())
    m_lo, m_hi = mass(c_lo), mass(c_hi)
    if not (m_lo >= 1.0 - BISECTION_TOL and m_hi <= 1.0 + BISECTION_TOL):
        raise BisectionFailure(
            f"bracket [{c_lo!r}, {c_hi!r}] maps to [{m_hi!r}, {m_lo!r}], which misses 1"
        )
    c = c_hi
    iters = 0
    for iters in range(1, BISECTION_MAX_ITER + 1):
        c = 0.5 * (c_lo + c_hi)
        m = mass(c)
        if abs(m - 1.0) <= BISECTION_TOL:
            break
        if m > 1.0:
            c_lo = c
        else:
            c_hi = c
    return result(np.clip(p / c, lo, hi), c, iters)


def project_tv(p, q, epsilon: float) -> ProjectionResult:
    """TV projection ``argmin_{p' in M(eps, q)} TV(p, p')``.

    Greedy solution of the linear program ``min sum (p - p')_+`` over the
    box ``[q e^{-eps/2}, q e^{eps/2}]`` intersected with the simplex. Start
    from ``p`` clipped into the box. Surplus mass can only be removed at unit
    cost, and deficit mass can always be added at zero cost (coordinates
    still below ``p`` are already at their upper bound), so filling in index
    order is optimal. The minimiser is not unique; the value is.
    """
    p, q, eps, lo, hi = _prepare(p, q, epsilon)
    x = np.clip(p, lo, hi)
    excess = math.fsum(x) - 1.0
    touched = 0
    if excess > 0:
        for i in range(x.shape[0]):
            if excess <= 0:
                break
            take = min(x[i] - lo[i], excess)
            if take > 0:
                x[i] -= take
                excess -= take
                touched += 1
    elif excess < 0:
        need = -excess
        for i in range(x.shape[0]):
            if need <= 0:
                break
            give = min(hi[i] - x[i], need)
            if give > 0:
                x[i] += give
                need -= give
                touched += 1
        excess = -need
    if abs(math.fsum(x) - 1.0) > 1e-9:
        raise Infeasible(f"could not reach unit mass (residual {excess!r})")
    objective = math.fsum(np.maximum(p - x, 0.0))
    return ProjectionResult(Distribution(x), None, objective, touched)


def project(p, q, epsilon: float, divergence: str = "kl") -> ProjectionResult:
    key = divergence.lower()
    if key == "kl":
        return project_kl(p, q, epsilon)
    if key == "tv":
        return project_tv(p, q, epsilon)
    raise ValueError(f"divergence must be 'kl' or 'tv', got {divergence!r}")
