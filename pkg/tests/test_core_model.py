import math

import numpy as np
import pytest

from core_model import (
    DiscreteDistribution,
    InnerProductEvaluation,
    Permutation,
    all_permutations,
    apply_permutation,
    canonical_form,
    certified_remoteness,
    compose,
    evaluate_phi,
    invert,
    remoteness,
    symmetric_projection,
    tidying_permutation,
    total_variation,
)


def test_compose_matches_sequential_application():
    v = np.array([10.0, 20.0, 30.0, 40.0])
    sigma = Permutation((2, 0, 3, 1))
    tau = Permutation((1, 3, 0, 2))
    np.testing.assert_array_equal(apply_permutation(compose(sigma, tau), v),
                                  apply_permutation(sigma, apply_permutation(tau, v)))


def test_inverse_and_identity():
    sigma = Permutation((2, 0, 3, 1))
    assert compose(sigma, invert(sigma)).is_identity()
    assert compose(invert(sigma), sigma).is_identity()
    assert Permutation.identity(4).is_identity()


def test_one_based_serialization():
    sigma = Permutation((1, 0, 2))
    assert sigma.to_one_based() == [2, 1, 3]
    assert Permutation.from_one_based([2, 1, 3]) == sigma


def test_invalid_permutation_rejected():
    with pytest.raises(ValueError):
        Permutation((0, 0, 1))


def test_apply_permutation_length_mismatch():
    with pytest.raises(ValueError):
        apply_permutation(Permutation.identity(3), [1.0, 2.0])


def test_all_permutations_lexicographic():
    perms = [p.mapping for p in all_permutations(3)]
    assert len(perms) == 6
    assert perms[0] == (0, 1, 2)
    assert perms == sorted(perms)


def test_evaluate_phi_and_offset():
    assert evaluate_phi([1.0, 0.0], [1.0, 1.0]) == pytest.approx(0.5)
    assert InnerProductEvaluation(offset=0.1)([1.0, 0.0], [1.0, 1.0]) == pytest.approx(0.6)
    with pytest.raises(ValueError):
        evaluate_phi([1.0], [1.0, 0.0])


def test_distribution_validation():
    with pytest.raises(ValueError):
        DiscreteDistribution(np.array([0.5, 0.4]), np.array([[0.1], [0.2]]), np.zeros(2))
    with pytest.raises(ValueError):
        DiscreteDistribution.dirac([1.2, 0.0])
    with pytest.raises(ValueError):
        DiscreteDistribution(np.ones(1), np.array([[0.5]]), np.array([-0.1]))


def test_permuted_moves_coordinates():
    phi = DiscreteDistribution.dirac([0.9, 0.1])
    swapped = phi.permuted(Permutation.transposition(2, 0, 1))
    np.testing.assert_allclose(swapped.centers[0], [0.1, 0.9])


def test_box_mean_uses_clipped_midpoint():
    phi = DiscreteDistribution.box([0.0, 0.5], 0.2)
    np.testing.assert_allclose(phi.mean(), [0.05, 0.5])


def test_shifted_clips_to_unit_cube():
    phi = DiscreteDistribution.dirac([0.95, 0.2]).shifted(0.1)
    np.testing.assert_allclose(phi.centers[0], [1.0, 0.3])


def test_sample_stays_inside_box():
    rng = np.random.default_rng(3)
    phi = DiscreteDistribution.from_components([(0.5, [0.2, 0.8], 0.1), (0.5, [0.6, 0.4], 0.2)])
    lower, upper = phi.bounds()
    for _ in range(50):
        x = phi.sample(rng)
        inside = [np.all(x >= lo) and np.all(x <= hi) for lo, hi in zip(lower, upper)]
        assert any(inside)


def test_serialization_preserves_distribution():
    phi = DiscreteDistribution.from_components([(0.25, [0.2, 0.8], 0.1), (0.75, [0.6, 0.4], 0.0)])
    restored = DiscreteDistribution.from_dict(phi.to_dict())
    assert restored.same_as(phi)


def test_symmetric_projection_of_dirac():
    projected = symmetric_projection(DiscreteDistribution.dirac([0.9, 0.1]))
    assert projected.size == 2
    np.testing.assert_allclose(sorted(projected.weights), [0.5, 0.5])


def test_total_variation_identity_is_zero():
    phi = DiscreteDistribution.from_components([(0.5, [0.2, 0.8], 0.1), (0.5, [0.3, 0.7], 0.2)])
    assert total_variation(phi, phi) == pytest.approx(0.0, abs=1e-12)


def test_remoteness_of_ordered_dirac():
    assert remoteness(DiscreteDistribution.dirac([0.9, 0.1])) == pytest.approx(0.5)
    assert remoteness(DiscreteDistribution.dirac([0.5, 0.5])) == pytest.approx(0.0, abs=1e-12)


def test_remoteness_of_disjoint_box_matches_certificate():
    phi = DiscreteDistribution.box([0.75, 0.25], 0.2)
    assert remoteness(phi) == pytest.approx(0.5)
    assert certified_remoteness(phi) == pytest.approx(0.5)


def test_remoteness_of_overlapping_box():
    # 盒子与其对换像重叠1/4体积
    phi = DiscreteDistribution.box([0.55, 0.45], 0.2)
    assert remoteness(phi) == pytest.approx(0.375)
    assert certified_remoteness(phi) is None


def test_certified_remoteness_large_n():
    n = 12
    centers = np.linspace(0.95, 0.05, n)
    phi = DiscreteDistribution.box(centers, 0.05)
    assert certified_remoteness(phi) == pytest.approx(1.0 - 1.0 / math.factorial(n))


def test_remoteness_rejects_large_n():
    with pytest.raises(ValueError):
        remoteness(DiscreteDistribution.dirac(np.linspace(1.0, 0.0, 9)))


def test_tidying_permutation_sorts_means():
    phi = DiscreteDistribution.dirac([0.2, 0.9, 0.5])
    np.testing.assert_allclose(canonical_form(phi).centers[0], [0.9, 0.5, 0.2])
    sigma = tidying_permutation(phi)
    np.testing.assert_allclose(apply_permutation(sigma.inverse(), phi.mean()), [0.9, 0.5, 0.2])


def test_tidying_is_equivariant():
    phi = DiscreteDistribution.from_components([(0.3, [0.1, 0.7, 0.4, 0.9], 0.05),
                                                (0.7, [0.2, 0.6, 0.35, 0.8], 0.02)])
    sigma = tidying_permutation(phi)
    for pi in all_permutations(4):
        moved = phi.permuted(pi)
        assert tidying_permutation(moved) == compose(invert(pi), sigma)
        assert canonical_form(moved).same_as(canonical_form(phi))


def test_tidying_ties_keep_lower_index_first():
    sigma = tidying_permutation(DiscreteDistribution.dirac([0.5, 0.5, 0.5]))
    assert sigma.is_identity()


def test_symmetric_projection_is_idempotent():
    phi = DiscreteDistribution.from_components([(0.4, [0.8, 0.3, 0.1], 0.05),
                                                (0.6, [0.2, 0.5, 0.9], 0.1)])
    once = symmetric_projection(phi)
    assert symmetric_projection(once).same_as(once)
    assert total_variation(once, symmetric_projection(once)) == pytest.approx(0.0, abs=1e-12)


def test_remoteness_of_distinct_dirac_n3():
    # 6个轨道点互不相同，每个点质量1/6
    assert remoteness(DiscreteDistribution.dirac([0.7, 0.2, 0.4])) == pytest.approx(5.0 / 6.0)
