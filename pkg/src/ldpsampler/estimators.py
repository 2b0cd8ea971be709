"""scikit-learn style wrappers around the samplers.

``fit`` learns the public prior, either from a single probability vector or
from a matrix of per-user histograms (averaged after row normalisation, the
same way group priors are formed by the benchmark harness). ``transform``
maps each row of a matrix of user distributions to its sampling
distribution, and ``sample`` releases one private symbol per row.

    >>> est = OptimalSampler(epsilon=1.0).fit([0.2, 0.3, 0.5])
    >>> est.transform([[1.0, 0.0, 0.0]]).shape
    (1, 3)
"""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ldpsampler.core import FDivergence, check_epsilon, validate_distribution
from ldpsampler.exceptions import DimensionMismatch, ValidationError
from ldpsampler.harness import prior_from_counts
from ldpsampler.mechanism import build_optimal, optimal_utility, worst_case_divergence
from ldpsampler.mollifier import project
from ldpsampler.sampler import RandomStream, inverse_cdf


def _check_prior(X):
    X = check_array(X, ensure_2d=False, dtype=np.float64)
    if X.ndim == 1:
        return validate_distribution(X, require_positive=True)
    if np.any(X < 0):
        raise ValidationError("histograms must be nonnegative")
    return validate_distribution(prior_from_counts(X), require_positive=True)


def _check_rows(X, n):
    X = check_array(X, ensure_2d=False, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != n:
        raise DimensionMismatch(f"X has {X.shape[1]} features, fitted on {n}")
    for row in X:
        validate_distribution(row)
    return X


def _check_stream(random_state):
    if isinstance(random_state, RandomStream):
        return random_state
    if random_state is None:
        return RandomStream(0)
    if isinstance(random_state, numbers.Integral):
        return RandomStream(int(random_state))
    raise TypeError(f"random_state must be None, an int, or a RandomStream, got {random_state!r}")


class _PriorSampler(TransformerMixin, BaseEstimator):
    def sample(self, X, random_state=None):
        """One private symbol per row of ``X``; one uniform variate per row."""
        dists = self.transform(X)
        rng = _check_stream(random_state)
        return np.array([inverse_cdf(d, rng.uniform()) for d in dists], dtype=np.int64)

    def _validate_epsilon(self):
        return check_epsilon(self.epsilon)


class OptimalSampler(_PriorSampler):
    """Minimax-optimal eps-LDP sampler that keeps the fitted prior invariant.

    Parameters
    ----------
    epsilon : float, default=1.0
        Privacy budget in nats.

    Attributes
    ----------
    prior_ : Distribution
    bundle_ : MechanismBundle
    kernel_ : ndarray of shape (n_features, n_features)
    n_features_in_ : int
    """

    def __init__(self, epsilon=1.0):
        self.epsilon = epsilon

    def fit(self, X, y=None):
        eps = self._validate_epsilon()
        self.prior_ = _check_prior(X)
        self.bundle_ = build_optimal(self.prior_, eps)
        self.kernel_ = self.bundle_.kernel.entries
        self.n_features_in_ = self.prior_.n
        return self

    def transform(self, X):
        check_is_fitted(self, "bundle_")
        X = _check_rows(X, self.n_features_in_)
        out = X @ self.kernel_
        return out / out.sum(axis=1, keepdims=True)

    def worst_case(self, divergence="tv"):
        """Worst-case divergence between any input and its sampling distribution."""
        check_is_fitted(self, "bundle_")
        f = divergence if isinstance(divergence, FDivergence) else FDivergence.from_name(divergence)
        return worst_case_divergence(self.bundle_.kernel, f)

    def optimal_utility(self, divergence="tv"):
        check_is_fitted(self, "bundle_")
        f = divergence if isinstance(divergence, FDivergence) else FDivergence.from_name(divergence)
        return optimal_utility(self.prior_.min, self.bundle_.epsilon, f)


class MollifierSampler(_PriorSampler):
    """Baseline sampler: project each row onto the relative mollifier of the prior.

    Parameters
    ----------
    epsilon : float, default=1.0
    divergence : {"kl", "tv"}, default="kl"
    """

    def __init__(self, epsilon=1.0, divergence="kl"):
        self.epsilon = epsilon
        self.divergence = divergence

    def fit(self, X, y=None):
        self._validate_epsilon()
        if self.divergence not in ("kl", "tv"):
            raise ValidationError(f"divergence must be 'kl' or 'tv', got {self.divergence!r}")
        self.prior_ = _check_prior(X)
        self.n_features_in_ = self.prior_.n
        return self

    def transform(self, X):
        check_is_fitted(self, "prior_")
        X = _check_rows(X, self.n_features_in_)
        eps = self._validate_epsilon()
        return np.stack([project(p, self.prior_, eps, self.divergence).projected.probs for p in X])
