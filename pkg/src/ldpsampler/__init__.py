"""Minimax-optimal locally private sampling anchored to a public prior."""

from ldpsampler.core import (
    Distribution,
    DivergenceKind,
    FDivergence,
    f_divergence,
    kl_divergence,
    sort_with_permutation,
    tv_distance,
    validate_distribution,
)
from ldpsampler.estimators import MollifierSampler, OptimalSampler
from ldpsampler.mechanism import (
    Kernel,
    MechanismBundle,
    apply_kernel,
    binary_optimal,
    build_optimal,
    diagonal_upper_bound,
    optimal_utility,
    randomized_response,
    verify_invariance,
    verify_ldp,
    worst_case_divergence,
)
from ldpsampler.mollifier import ProjectionResult, in_mollifier, project_kl, project_tv
from ldpsampler.sampler import (
    RandomStream,
    private_sample_mollifier,
    private_sample_optimal,
    sample_index,
)

__version__ = "0.1.0"

__all__ = [
    "Distribution",
    "DivergenceKind",
    "FDivergence",
    "Kernel",
    "MechanismBundle",
    "MollifierSampler",
    "OptimalSampler",
    "ProjectionResult",
    "RandomStream",
    "apply_kernel",
    "binary_optimal",
    "build_optimal",
    "diagonal_upper_bound",
    "f_divergence",
    "in_mollifier",
    "kl_divergence",
    "optimal_utility",
    "private_sample_mollifier",
    "private_sample_optimal",
    "project_kl",
    "project_tv",
    "randomized_response",
    "sample_index",
    "sort_with_permutation",
    "tv_distance",
    "validate_distribution",
    "verify_invariance",
    "verify_ldp",
    "worst_case_divergence",
]
