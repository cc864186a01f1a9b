import json
import math

import numpy as np
import pytest

from bayes_oracle import (
    JointDistribution,
    StrategyTable,
    ZeroEvidenceError,
    check_degradation,
    check_indistinguishability,
    common_permutation_group,
    group_average,
    mmse_strategy,
    omega_t_table,
    outcome_table_moments,
    posterior_mean,
    strategy_mse,
    uniform_grid_prior,
)
from core_model import DiscreteDistribution, InnerProductEvaluation, Permutation
from degradation_channel import all_outcomes, omega_T, outcome_index, outcome_likelihoods
from utils import dumps_canonical, ratio_from_json, ratio_to_json


def two_point_prior():
    """½δ((1,0),(1,0)) + ½δ((1,0),(0,1))"""
    return JointDistribution.mixture([
        (0.5, JointDistribution.dirac_pair([1.0, 0.0], [1.0, 0.0])),
        (0.5, JointDistribution.dirac_pair([1.0, 0.0], [0.0, 1.0])),
    ])


def swapped(joint):
    swap = Permutation.transposition(2, 0, 1)
    return joint.permuted(swap, swap)


def test_posterior_mean_hand_enumeration():
    joint = two_point_prior()
    assert posterior_mean(joint, (1, 0), (1, 0), 2) == pytest.approx(0.5, abs=1e-12)
    assert posterior_mean(joint, (1, 0), (0, 0), 2) == pytest.approx(0.25, abs=1e-12)
    assert posterior_mean(joint, (0, 0), (0, 1), 2) == pytest.approx(0.0, abs=1e-12)


def test_posterior_mean_zero_evidence():
    with pytest.raises(ZeroEvidenceError):
        posterior_mean(two_point_prior(), (1, 0), (1, 1), 2)


def test_mmse_hand_value():
    table, mmse = mmse_strategy(two_point_prior(), 2)
    assert mmse == pytest.approx(0.03125, abs=1e-12)
    # 不可达结果使用先验均值
    assert table.estimate((0, 1), (0, 1)) == pytest.approx(0.25)


def test_translation_shifts_estimator():
    joint = uniform_grid_prior(2, 3)
    base, base_mmse = mmse_strategy(joint, 2)
    shifted, shifted_mmse = mmse_strategy(joint, 2, InnerProductEvaluation(offset=0.3))
    np.testing.assert_allclose(shifted.values, base.values + 0.3, atol=1e-12)
    assert shifted_mmse == pytest.approx(base_mmse, abs=1e-12)


def test_mmse_is_below_any_table():
    joint = uniform_grid_prior(2, 3)
    _, mmse = mmse_strategy(joint, 3)
    rng = np.random.default_rng(2)
    for _ in range(5):
        table = StrategyTable(2, rng.random((4, 4)))
        assert strategy_mse(table, joint, 3) >= mmse - 1e-12


def test_omega_t_mse_matches_direct_variance():
    x = np.array([0.8, 0.3])
    y = np.array([0.5, 0.6])
    k = 2.0
    joint = JointDistribution.dirac_pair(x, y)
    px = outcome_likelihoods(x, k)
    py = outcome_likelihoods(y, k)
    outcomes = all_outcomes(2)
    phi = np.dot(x, y) / 2
    direct = sum(px[a] * py[b] * (omega_T(outcomes[a], outcomes[b], k) - phi) ** 2
                 for a in range(4) for b in range(4))
    assert strategy_mse(omega_t_table(2, k), joint, k) == pytest.approx(direct, abs=1e-12)


def test_strategy_table_requires_complete_mapping():
    with pytest.raises(ValueError):
        StrategyTable.from_mapping(1, {((0,), (0,)): 0.1})
    table = StrategyTable(1, np.array([[0.0, np.nan], [0.0, 0.0]]))
    with pytest.raises(ValueError):
        strategy_mse(table, uniform_grid_prior(1, 2), 2)


def test_strategy_table_is_read_only():
    table = omega_t_table(2, 2)
    with pytest.raises(ValueError):
        table.values[0, 0] = 1.0


def test_oracle_size_limits():
    with pytest.raises(ValueError):
        mmse_strategy(uniform_grid_prior(5, 2), 2)
    with pytest.raises(ValueError):
        mmse_strategy(uniform_grid_prior(4, 5), 2)


def test_degradation_ratio_at_least_one():
    joint = uniform_grid_prior(2, 5)
    r1 = check_degradation(joint, 1.0)
    r2 = check_degradation(joint, 2.0)
    assert r1.ratio >= 1.0 - 1e-9
    assert r1.ratio < r2.ratio
    assert r2.flags["degradation"]


def test_degradation_on_dirac_is_degenerate():
    report = check_degradation(JointDistribution.dirac_pair([0.5, 0.5], [0.25, 1.0]), 2.0)
    assert report.flags["degenerate"]
    assert report.ratio is None


def test_group_average_gives_orbit_mixture():
    joint = two_point_prior()
    averaged = group_average(joint, common_permutation_group(2))
    expected = JointDistribution.uniform_mixture([joint, swapped(joint)])
    assert averaged.same_as(expected)


def test_group_average_rejects_non_group():
    cycle = Permutation((1, 2, 0))
    identity = Permutation.identity(3)
    with pytest.raises(ValueError):
        group_average(uniform_grid_prior(3, 2), [(identity, identity), (cycle, cycle)])


def test_indistinguishability_two_point_orbit():
    joint = two_point_prior()
    report = check_indistinguishability([joint, swapped(joint)], 2, alpha=1.2)
    assert report.lhs == pytest.approx(0.046875, abs=1e-12)
    assert report.rhs == pytest.approx(0.03125, abs=1e-12)
    assert report.ratio == pytest.approx(1.5, abs=1e-9)
    assert report.passed
    assert report.to_dict()["pass"] is True


def test_indistinguishability_single_member_control():
    report = check_indistinguishability([uniform_grid_prior(2, 3)], 2, alpha=1.2)
    assert report.ratio == pytest.approx(1.0, abs=1e-9)
    assert not report.passed


def test_indistinguishability_degenerate_members():
    family = [JointDistribution.dirac_pair([1.0, 0.0], [1.0, 0.0]),
              JointDistribution.dirac_pair([0.0, 1.0], [1.0, 0.0])]
    report = check_indistinguishability(family, 2, alpha=1.2)
    assert report.rhs == pytest.approx(0.0, abs=1e-15)
    assert report.flags["degenerate"]
    assert report.ratio == float("inf")


def test_indistinguishability_rejects_bad_family():
    with pytest.raises(ValueError):
        check_indistinguishability([], 2)
    with pytest.raises(ValueError):
        check_indistinguishability([two_point_prior()] * 17, 2)
    with pytest.raises(ValueError):
        check_indistinguishability([two_point_prior()], 2, alpha=1.0)


def test_joint_serialization():
    joint = JointDistribution.product(DiscreteDistribution.box([0.7, 0.2], 0.1),
                                      DiscreteDistribution.dirac([0.4, 0.4]))
    assert JointDistribution.from_dict(joint.to_dict()).same_as(joint)


def orbit_pair():
    """{δ((1,0),(1,0)), δ((0,1),(0,1))}"""
    return [JointDistribution.dirac_pair([1.0, 0.0], [1.0, 0.0]),
            JointDistribution.dirac_pair([0.0, 1.0], [0.0, 1.0])]


def test_posterior_on_orbit_pair_mixture():
    joint = JointDistribution.uniform_mixture(orbit_pair())
    moments = outcome_table_moments(joint, 2)
    # i = j = (1,0)只可能来自第一个分量：½·(½·1)·(½·1)
    assert moments.Z[outcome_index((1, 0)), outcome_index((1, 0))] == pytest.approx(0.125, abs=1e-15)
    # i = j = (0,0)两个分量各贡献½·¼
    assert moments.Z[outcome_index((0, 0)), outcome_index((0, 0))] == pytest.approx(0.25, abs=1e-15)
    assert posterior_mean(joint, (1, 0), (1, 0), 2) == pytest.approx(0.5, abs=1e-12)
    assert posterior_mean(joint, (0, 0), (0, 0), 2) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(ZeroEvidenceError):
        posterior_mean(joint, (1, 0), (0, 1), 2)


def test_indistinguishability_orbit_pair_is_degenerate():
    # 两个成员上 φ 都恒为1/2，混合后仍无误差
    report = check_indistinguishability(orbit_pair(), 2, alpha=1.2)
    assert report.lhs == pytest.approx(0.0, abs=1e-15)
    assert report.rhs == pytest.approx(0.0, abs=1e-15)
    assert report.ratio == 1.0
    assert report.flags["degenerate"]
    assert not report.passed


def test_infinite_ratio_serialized_as_string():
    family = [JointDistribution.dirac_pair([1.0, 0.0], [1.0, 0.0]),
              JointDistribution.dirac_pair([0.0, 1.0], [1.0, 0.0])]
    data = json.loads(dumps_canonical(check_indistinguishability(family, 2, alpha=1.2).to_dict()))
    assert data["ratio"] == "inf"
    assert data["pass"] is True
    finite = json.loads(dumps_canonical(check_degradation(uniform_grid_prior(2, 3), 2.0).to_dict()))
    assert isinstance(finite["ratio"], float)
    degenerate = check_degradation(JointDistribution.dirac_pair([0.5, 0.5], [0.25, 1.0]), 2.0)
    assert degenerate.to_dict()["ratio"] is None


def test_ratio_json_helpers():
    assert ratio_to_json(math.inf) == "inf"
    assert ratio_to_json(1.5) == 1.5
    assert ratio_to_json(None) is None
    assert ratio_from_json("inf") == math.inf
    assert ratio_from_json(2) == 2.0
