import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import LN2
from ldpsampler.core import Distribution, FDivergence, f_divergence, tv_distance
from ldpsampler.exceptions import (
    AlphaOutOfRange,
    DimensionMismatch,
    InvalidKernel,
    NegativeEpsilon,
    NonFiniteEpsilon,
    QminOutOfRange,
    TooShort,
    ZeroEntry,
)
from ldpsampler.mechanism import (
    Kernel,
    MechanismBundle,
    apply_kernel,
    binary_optimal,
    build_optimal,
    column_log_ratios,
    diagonal_upper_bound,
    kernel_from_dict,
    kernel_to_dict,
    optimal_utility,
    randomized_response,
    sorted_optimal_entries,
    sorted_optimal_entries_recursive,
    verify_invariance,
    verify_ldp,
    worst_case_divergence,
)
from oracles import random_prior, random_simplex

NAMED = [FDivergence.tv(), FDivergence.kl(), FDivergence.chi_square(), FDivergence.squared_hellinger()]
EPSILONS = [0.0, 0.1, 1.0, LN2, 2.0, 8.0]

# Hand execution of the recursion on q = (0.2, 0.3, 0.5), eps = ln 2:
# d = 1.2, m = 5/6, tail (0.375, 0.625) with binary block [[6/11, 5/11], [3/11, 8/11]].
HAND_KERNEL = [
    [Fraction(1, 3), Fraction(1, 4), Fraction(5, 12)],
    [Fraction(1, 6), Fraction(5, 11), Fraction(25, 66)],
    [Fraction(1, 6), Fraction(5, 22), Fraction(20, 33)],
]


def _hand_kernel_checks():
    q = [Fraction(2, 10), Fraction(3, 10), Fraction(5, 10)]
    k = HAND_KERNEL
    assert all(sum(row) == 1 for row in k)
    assert [sum(q[i] * k[i][j] for i in range(3)) for j in range(3)] == q
    ratios = [max(col) / min(col) for col in zip(*k)]
    assert ratios == [2, 2, Fraction(8, 5)]
    assert min(k[i][i] for i in range(3)) == Fraction(1, 3)


_hand_kernel_checks()


class TestBinaryOptimal:
    def test_uniform_ln2_is_randomized_response(self):
        np.testing.assert_allclose(binary_optimal(0.5, LN2).entries, [[2 / 3, 1 / 3], [1 / 3, 2 / 3]], atol=1e-15)
        np.testing.assert_allclose(binary_optimal(0.5, LN2).entries, randomized_response(2, LN2).entries, atol=1e-15)

    def test_zero_epsilon_rows_equal_prior(self):
        np.testing.assert_allclose(binary_optimal(0.3, 0.0).entries, [[0.3, 0.7], [0.3, 0.7]], atol=1e-15)

    def test_skewed_prior(self):
        e2 = math.exp(2)
        d = e2 * 0.01 + 0.99
        expected = [[e2 * 0.01 / d, 0.99 / d], [0.01 / d, (e2 * 0.01 - 0.01 + 0.99) / d]]
        assert d == pytest.approx(1.0638906, abs=1e-7)
        k = binary_optimal(0.01, 2.0).entries
        np.testing.assert_allclose(k, expected, atol=1e-15)
        np.testing.assert_allclose(k, [[0.069453, 0.930547], [0.009400, 0.990600]], atol=1e-5)
        np.testing.assert_allclose(np.array([0.01, 0.99]) @ k, [0.01, 0.99], atol=1e-15)

    @pytest.mark.parametrize("alpha", [0.0, -0.1, 0.51, 1.0])
    def test_alpha_out_of_range(self, alpha):
        with pytest.raises(AlphaOutOfRange):
            binary_optimal(alpha, 1.0)

    def test_bad_epsilon(self):
        with pytest.raises(NegativeEpsilon):
            binary_optimal(0.3, -1.0)
        with pytest.raises(NonFiniteEpsilon):
            binary_optimal(0.3, math.inf)


class TestBuildOptimalExamples:
    def test_hand_computed(self):
        bundle = build_optimal([0.2, 0.3, 0.5], LN2)
        expected = np.array(HAND_KERNEL, dtype=float)
        np.testing.assert_allclose(bundle.sorted_kernel.entries, expected, atol=1e-15)
        np.testing.assert_allclose(bundle.kernel.entries, expected, atol=1e-15)

    def test_unsorted_prior_conjugates(self):
        bundle = build_optimal([0.5, 0.2, 0.3], LN2)
        np.testing.assert_array_equal(bundle.perm, [2, 0, 1])
        expected = np.array(HAND_KERNEL, dtype=float)[np.ix_(bundle.perm, bundle.perm)]
        np.testing.assert_allclose(bundle.kernel.entries, expected, atol=1e-15)
        np.testing.assert_allclose(bundle.kernel.entries[1, 1], 1 / 3, atol=1e-15)

    def test_zero_epsilon_rows_equal_prior(self, rng):
        q = random_prior(rng, 7)
        k = build_optimal(q, 0.0).kernel.entries
        np.testing.assert_allclose(k, np.tile(q, (7, 1)), atol=1e-15)

    @pytest.mark.parametrize("n", [2, 3, 5, 17])
    @pytest.mark.parametrize("eps", [0.1, 1.0, 4.0])
    def test_uniform_prior_is_randomized_response(self, n, eps):
        k = build_optimal(np.full(n, 1 / n), eps).kernel.entries
        np.testing.assert_allclose(k, randomized_response(n, eps).entries, atol=1e-12)

    def test_errors(self):
        with pytest.raises(ZeroEntry):
            build_optimal([0.0, 1.0], 1.0)
        with pytest.raises(NegativeEpsilon):
            build_optimal([0.5, 0.5], -0.1)
        with pytest.raises(TooShort):
            build_optimal([1.0], 1.0)
        with pytest.raises(NonFiniteEpsilon):
            build_optimal([0.5, 0.5], math.inf)

    def test_bundle_invariants(self, rng):
        q = random_prior(rng, 9)
        b = build_optimal(q, 1.3)
        perm_matrix = np.zeros((9, 9))
        perm_matrix[np.arange(9), b.perm] = 1
        np.testing.assert_allclose(b.kernel.entries, perm_matrix @ b.sorted_kernel.entries @ perm_matrix.T, atol=1e-12)
        np.testing.assert_allclose(q @ b.kernel.entries, q, atol=1e-9)

    def test_entries_read_only(self):
        b = build_optimal([0.2, 0.3, 0.5], 1.0)
        with pytest.raises(ValueError):
            b.kernel.entries[0, 0] = 0.0


class TestRandomizedResponse:
    def test_binary_ln2(self):
        np.testing.assert_allclose(randomized_response(2, LN2).entries, [[2 / 3, 1 / 3], [1 / 3, 2 / 3]], atol=1e-15)

    def test_zero_epsilon(self):
        np.testing.assert_allclose(randomized_response(3, 0.0).entries, np.full((3, 3), 1 / 3), atol=1e-15)

    def test_binary_eps2(self):
        k = randomized_response(2, 2.0).entries
        e2 = math.exp(2)
        assert k[0, 0] == pytest.approx(e2 / (e2 + 1), abs=1e-15)
        assert k[0, 0] == pytest.approx(0.880797, abs=1e-6)
        assert k[0, 1] == pytest.approx(0.119203, abs=1e-6)

    def test_negative_epsilon(self):
        with pytest.raises(NegativeEpsilon):
            randomized_response(3, -1)


def _utility_by_hand(qmin, eps, fn, f0):
    e = math.exp(eps)
    d = e * qmin + 1 - qmin
    first = 0.0 if qmin == 1 else (1 - qmin) / d * f0
    return first + e * qmin / d * fn(d / (e * qmin))


class TestOptimalUtility:
    def test_example_uniform_prior(self):
        got = optimal_utility(0.5, 2.0, FDivergence.tv())
        assert got == pytest.approx(1 / (math.exp(2) + 1), abs=1e-15)
        assert got == pytest.approx(0.1192, abs=1e-4)
        assert round(got, 1) == 0.1

    @pytest.mark.parametrize("qmin", [0.01, 0.2, 0.5, 1.0])
    def test_tv_zero_epsilon(self, qmin):
        assert optimal_utility(qmin, 0.0, FDivergence.tv()) == pytest.approx(1 - qmin, abs=1e-15)

    def test_kl_zero_epsilon(self):
        got = optimal_utility(0.25, 0.0, FDivergence.kl())
        by_hand = _utility_by_hand(0.25, 0.0, lambda t: t * math.log(t), 0.0)
        assert by_hand == pytest.approx(math.log(4), abs=1e-15)
        assert got == pytest.approx(1.386294, abs=1e-6)
        assert got == pytest.approx(by_hand, abs=1e-15)

    def test_matches_hand_formula(self, rng):
        gens = {
            "tv": (FDivergence.tv(), lambda t: 0.5 * abs(t - 1), 0.5),
            "kl": (FDivergence.kl(), lambda t: t * math.log(t), 0.0),
            "chi2": (FDivergence.chi_square(), lambda t: (t - 1) ** 2, 1.0),
            "hel": (FDivergence.squared_hellinger(), lambda t: (math.sqrt(t) - 1) ** 2, 1.0),
        }
        for _ in range(200):
            qmin, eps = float(rng.uniform(1e-4, 1)), float(rng.uniform(0, 10))
            for f, fn, f0 in gens.values():
                assert optimal_utility(qmin, eps, f) == pytest.approx(_utility_by_hand(qmin, eps, fn, f0), rel=1e-12, abs=1e-15)

    def test_tv_closed_form(self, rng):
        for _ in range(200):
            qmin, eps = float(rng.uniform(1e-4, 1)), float(rng.uniform(0, 10))
            e = math.exp(eps)
            assert optimal_utility(qmin, eps, FDivergence.tv()) == pytest.approx((1 - qmin) / (e * qmin + 1 - qmin), rel=1e-12, abs=1e-15)

    def test_infinite_f0(self):
        f = FDivergence.custom(lambda t: -math.log(t), f0=math.inf, slope_at_infinity=0.0)
        assert optimal_utility(0.3, 1.0, f) == math.inf
        assert optimal_utility(1.0, 1.0, f) == 0.0

    def test_errors(self):
        with pytest.raises(QminOutOfRange):
            optimal_utility(0.0, 1.0, FDivergence.tv())
        with pytest.raises(QminOutOfRange):
            optimal_utility(1.5, 1.0, FDivergence.tv())
        with pytest.raises(NegativeEpsilon):
            optimal_utility(0.5, -1.0, FDivergence.tv())

    def test_strictly_decreasing_in_epsilon(self):
        grid = np.linspace(0, 20, 201)
        for qmin in [1e-3, 0.01, 0.1, 0.3, 0.5]:
            vals = [optimal_utility(qmin, e, FDivergence.tv()) for e in grid]
            assert np.all(np.diff(vals) < 0)


class TestWorstCaseDivergence:
    def test_identity(self):
        for f in NAMED:
            assert worst_case_divergence(Kernel.identity(4), f) == 0

    def test_randomized_response_tv(self):
        got = worst_case_divergence(randomized_response(3, LN2), FDivergence.tv())
        assert got == pytest.approx((3 - 1) / (2 + 3 - 1), abs=1e-15)

    def test_built_kernel_tv(self):
        k = build_optimal([0.2, 0.3, 0.5], LN2).kernel
        got = worst_case_divergence(k, FDivergence.tv())
        assert got == pytest.approx(2 / 3, abs=1e-15)
        assert got == pytest.approx(optimal_utility(0.2, LN2, FDivergence.tv()), abs=1e-15)

    def test_equals_max_over_diracs(self, rng):
        for _ in range(30):
            n = int(rng.integers(2, 12))
            k = build_optimal(random_prior(rng, n), float(rng.uniform(0, 5))).kernel
            for f in NAMED:
                diracs = [f_divergence(f, np.eye(n)[i], k.entries[i]) for i in range(n)]
                assert worst_case_divergence(k, f) == pytest.approx(max(diracs), rel=1e-10, abs=1e-12)


class TestVerification:
    def test_ldp_randomized_response_exact(self):
        r = verify_ldp(randomized_response(4, 1.5), 1.5)
        assert r.passed
        assert r.max_log_ratio == pytest.approx(1.5, abs=1e-12)

    def test_ldp_identity_fails(self):
        r = verify_ldp(Kernel.identity(2), 10.0)
        assert not r.passed
        assert r.max_log_ratio == math.inf

    def test_ldp_built_kernel(self):
        k = build_optimal([0.2, 0.3, 0.5], LN2).kernel
        r = verify_ldp(k, LN2)
        assert r.passed
        np.testing.assert_allclose(np.exp(column_log_ratios(k)), [2, 2, 1.6], atol=1e-12)

    def test_invariance_uniform_rr(self):
        r = verify_invariance(randomized_response(2, 1.0), [0.5, 0.5])
        assert r.passed and r.max_abs_deviation <= 1e-15

    def test_invariance_built(self):
        q = [0.2, 0.3, 0.5]
        assert verify_invariance(build_optimal(q, LN2).kernel, q).passed

    def test_invariance_fails_off_prior(self):
        e = math.e
        r = verify_invariance(randomized_response(2, 1.0), [0.3, 0.7], tol=1e-9)
        assert not r.passed
        assert r.max_abs_deviation == pytest.approx(abs(0.3 * e / (e + 1) + 0.7 / (e + 1) - 0.3), abs=1e-15)

    def test_invariance_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            verify_invariance(randomized_response(2, 1.0), [0.2, 0.3, 0.5])


class TestDiagonalUpperBound:
    def test_zero_epsilon(self):
        np.testing.assert_allclose(diagonal_upper_bound([0.5, 0.5], 0.0), [0.5, 0.5], atol=1e-15)

    def test_three_point(self):
        b = diagonal_upper_bound([0.2, 0.3, 0.5], LN2)
        np.testing.assert_allclose(b, [1 / 3, 6 / 13, 2 / 3], atol=1e-15)
        assert b[0] == pytest.approx(build_optimal([0.2, 0.3, 0.5], LN2).kernel.entries[0, 0], abs=1e-15)

    def test_skewed(self):
        b = diagonal_upper_bound([0.01, 0.99], 2.0)
        e2 = math.exp(2)
        np.testing.assert_allclose(b, [e2 * 0.01 / (e2 * 0.01 + 0.99), e2 * 0.99 / (e2 * 0.99 + 0.01)], atol=1e-15)
        np.testing.assert_allclose(b, [0.069453, 0.998635], atol=1e-6)
        assert b[0] == pytest.approx(binary_optimal(0.01, 2.0).entries[0, 0], abs=1e-15)

    def test_zero_entry(self):
        with pytest.raises(ZeroEntry):
            diagonal_upper_bound([0.0, 1.0], 1.0)


class TestApplyKernel:
    def test_dirac_picks_row(self, rng):
        k = build_optimal(random_prior(rng, 5), 1.0).kernel
        np.testing.assert_allclose(apply_kernel(np.eye(5)[0], k).probs, k.entries[0], atol=1e-15)

    def test_example_with_public_prior(self):
        p = [0.05, 0.95]
        out = apply_kernel(p, binary_optimal(0.01, 2.0))
        k = binary_optimal(0.01, 2.0).entries
        by_hand = [0.05 * k[0, 0] + 0.95 * k[1, 0], 0.05 * k[0, 1] + 0.95 * k[1, 1]]
        np.testing.assert_allclose(out.probs, by_hand, atol=1e-15)
        np.testing.assert_allclose(out.probs, [0.012402, 0.987598], atol=1e-5)
        assert tv_distance(p, out) == pytest.approx(0.0376, abs=1e-4)

    def test_example_without_public_prior(self):
        p = [0.05, 0.95]
        out = apply_kernel(p, randomized_response(2, 2.0))
        np.testing.assert_allclose(out.probs, [0.157284, 0.842716], atol=1e-5)
        assert tv_distance(p, out) == pytest.approx(0.1073, abs=1e-4)

    def test_example_reported_value_discrepancy(self):
        # The reported 0.03 is neither the worst case for q_min = 0.01 nor the
        # realised TV for p = (0.05, 0.95); both are computed here, neither is 0.03.
        worst = optimal_utility(0.01, 2.0, FDivergence.tv())
        realised = tv_distance([0.05, 0.95], apply_kernel([0.05, 0.95], binary_optimal(0.01, 2.0)))
        assert worst == pytest.approx(0.93055, abs=1e-4)
        assert realised == pytest.approx(0.03760, abs=1e-4)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            apply_kernel([0.5, 0.5], randomized_response(3, 1.0))


def _random_instances(rng, count, n_max=512):
    for _ in range(count):
        n = int(rng.integers(2, n_max + 1))
        q = random_prior(rng, n)
        if rng.uniform() < 0.25:
            # force ties
            q = np.round(q * n) + 1
            q = q / q.sum()
        yield q


class TestMechanismProperties:
    def test_validity_and_optimality(self, rng):
        for q in _random_instances(rng, 60):
            for eps in EPSILONS:
                b = build_optimal(q, eps)
                k = b.kernel.entries
                assert np.max(np.abs(k.sum(axis=1) - 1)) <= 1e-9
                assert verify_invariance(b.kernel, q, 1e-9).passed
                assert verify_ldp(b.kernel, eps, 1e-9).passed
                d = b.sorted_kernel.diagonal
                assert np.all(np.diff(d) >= -1e-12)
                e, qmin = math.exp(eps), q.min()
                assert d.min() == pytest.approx(e * qmin / (e * qmin + 1 - qmin), abs=1e-9)
                bound = diagonal_upper_bound(np.sort(q), eps)
                assert np.all(d <= bound + 1e-12)
                for f in NAMED:
                    # chi-square reaches ~1/q_min here, so allow float resolution on top of 1e-9
                    assert worst_case_divergence(b.kernel, f) == pytest.approx(
                        optimal_utility(qmin, eps, f), rel=1e-12, abs=1e-9
                    )

    def test_fast_path_matches_recursion(self, rng):
        for q in _random_instances(rng, 80, n_max=64):
            for eps in EPSILONS:
                s = np.sort(q)
                np.testing.assert_allclose(
                    sorted_optimal_entries(s, eps), sorted_optimal_entries_recursive(s, eps), rtol=0, atol=1e-12
                )

    def test_permutation_equivariance(self, rng):
        for q in _random_instances(rng, 40, n_max=40):
            eps = float(rng.choice(EPSILONS))
            sigma = rng.permutation(q.size)
            base = build_optimal(q, eps).kernel.entries
            moved = build_optimal(q[sigma], eps).kernel.entries
            if len(np.unique(q)) == q.size:
                np.testing.assert_allclose(moved, base[np.ix_(sigma, sigma)], atol=1e-12)
            else:
                # tie order may differ; the conjugated kernel is then a different optimum
                assert verify_invariance(Kernel(moved), q[sigma]).passed

    def test_dirac_supremum(self, rng):
        for n in [2, 3, 5, 10, 20]:
            q = random_prior(rng, n)
            eps = float(rng.uniform(0.1, 4))
            ps = random_simplex(rng, n, size=2_000)
            for kernel in (build_optimal(q, eps).kernel, randomized_response(n, eps)):
                for f in (FDivergence.tv(), FDivergence.kl()):
                    top = max(f_divergence(f, np.eye(n)[i], kernel.entries[i]) for i in range(n))
                    for p in ps[:300]:
                        assert f_divergence(f, p, p @ kernel.entries) <= top + 1e-9

    @settings(max_examples=100, deadline=None)
    @given(
        st.lists(st.floats(1e-3, 1.0), min_size=2, max_size=30),
        st.floats(0.0, 12.0),
    )
    def test_hypothesis_validity(self, weights, eps):
        q = np.array(weights) / sum(weights)
        b = build_optimal(q, eps)
        assert verify_ldp(b.kernel, eps).passed
        assert verify_invariance(b.kernel, q).passed


class TestSerialization:
    def test_round_trip_exact(self, rng):
        q = random_prior(rng, 11)
        b = build_optimal(q, 0.7)
        text = json.dumps(b.to_dict())
        data = json.loads(text)
        assert set(data) == {"n", "epsilon", "prior", "kernel"}
        kernel, prior, eps = kernel_from_dict(data)
        np.testing.assert_array_equal(kernel.entries, b.kernel.entries)
        np.testing.assert_array_equal(prior.probs, q)
        assert eps == 0.7
        again = MechanismBundle.from_dict(data)
        np.testing.assert_array_equal(again.sorted_kernel.entries, b.sorted_kernel.entries)
        np.testing.assert_array_equal(again.perm, b.perm)

    def test_seventeen_digits_suffice(self, rng):
        k = build_optimal(random_prior(rng, 6), 1.1).kernel
        text = json.dumps([[float(f"{x:.17g}") for x in row] for row in k.entries])
        np.testing.assert_array_equal(np.array(json.loads(text)), k.entries)

    def test_rejects_non_stochastic(self):
        with pytest.raises(InvalidKernel):
            kernel_from_dict({"kernel": [[0.5, 0.4], [0.5, 0.5]]})
        with pytest.raises(DimensionMismatch):
            kernel_from_dict({"n": 3, "kernel": [[0.5, 0.5], [0.5, 0.5]]})

    def test_kernel_only_dict(self):
        d = kernel_to_dict(Kernel.identity(2))
        kernel, prior, eps = kernel_from_dict(d)
        assert prior is None and eps is None


class TestHugeEpsilon:
    @pytest.mark.parametrize("eps", [709.0, 710.0, 1e6])
    def test_kernel_tends_to_identity(self, eps):
        k = build_optimal([0.2, 0.3, 0.5], eps).kernel.entries
        np.testing.assert_allclose(k, np.eye(3), atol=1e-300)
        np.testing.assert_allclose(randomized_response(4, eps).entries, np.eye(4), atol=1e-300)
        assert optimal_utility(0.2, eps, FDivergence.tv()) == pytest.approx(0.0, abs=1e-300)
