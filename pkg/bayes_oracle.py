#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
贝叶斯预言机模块

在小规模实例（n ≤ 4）上穷举全部公开结果(i, j)，精确计算：
- 后验均值 E[φ | i, j]
- MMSE策略表及其均方误差
- 任意策略表的均方误差
- 退化性检验（ω_T 与 MMSE 的比值）
- α-不可区分性检验
- 群平均 R_G

联合分布表示为乘积项的加权列表 Σ w·(Φx ⊗ Φy)，每项内部x与y独立，
因此所有结果上的积分都可以拆成x侧和y侧的精确信道矩。
"""

import math
from dataclasses import dataclass, field

import numpy as np

from core_model import PHI, DiscreteDistribution, all_permutations
from degradation_channel import all_outcomes, check_k, outcome_index, outcome_moments
from utils import get_logger, ratio_to_json

logger = get_logger("bayes_oracle")

MAX_ORACLE_N = 4
MAX_ORACLE_COMPONENTS = 10 ** 4
MAX_FAMILY_SIZE = 16
# 证据小于该值视为零证据
ZERO_EVIDENCE = 1e-300


class ZeroEvidenceError(RuntimeError):
    """观测结果在联合分布下的证据为0，后验无定义"""


@dataclass(frozen=True, eq=False)
class JointDistribution:
    """联合分布 J(x, y) = Σ_t w_t · Φx_t(x) · Φy_t(y)"""

    terms: tuple

    def __post_init__(self):
        terms = tuple((float(w), px, py) for w, px, py in self.terms)
        if not terms:
            raise ValueError("联合分布至少需要一个乘积项")
        total = sum(w for w, _, _ in terms)
        if any(w <= 0 for w, _, _ in terms) or abs(total - 1.0) > 1e-9:
            raise ValueError(f"乘积项权重必须为正且和为1，当前和为{total}")
        n = terms[0][1].n
        if any(px.n != n or py.n != n for _, px, py in terms):
            raise ValueError("联合分布中所有分布的维度必须一致")
        object.__setattr__(self, 'terms', tuple((w / total, px, py) for w, px, py in terms))

    @classmethod
    def product(cls, phi_x, phi_y):
        return cls(((1.0, phi_x, phi_y),))

    @classmethod
    def dirac_pair(cls, x, y):
        return cls.product(DiscreteDistribution.dirac(x), DiscreteDistribution.dirac(y))

    @classmethod
    def mixture(cls, parts):
        """[(weight, JointDistribution), ...]的混合"""
        total = sum(w for w, _ in parts)
        terms = []
        for w, joint in parts:
            terms.extend((w / total * tw, px, py) for tw, px, py in joint.terms)
        return cls(tuple(terms))

    @classmethod
    def uniform_mixture(cls, joints):
        return cls.mixture([(1.0, joint) for joint in joints])

    @property
    def n(self):
        return self.terms[0][1].n

    @property
    def size(self):
        """有效盒子对数量 Σ|Φx|·|Φy|"""
        return sum(px.size * py.size for _, px, py in self.terms)

    def permuted(self, tau_x, tau_y):
        return JointDistribution(tuple(
            (w, px.permuted(tau_x), py.permuted(tau_y)) for w, px, py in self.terms))

    def merged(self):
        """合并(Φx, Φy)相同的乘积项"""
        weights = {}
        first = {}
        for w, px, py in self.terms:
            key = (px.key(), py.key())
            weights[key] = weights.get(key, 0.0) + w
            first.setdefault(key, (px, py))
        return JointDistribution(tuple((weights[key],) + first[key] for key in first))

    def term_map(self):
        result = {}
        for w, px, py in self.terms:
            key = (px.key(), py.key())
            result[key] = result.get(key, 0.0) + w
        return result

    def same_as(self, other, tol=1e-12):
        a_map, b_map = self.term_map(), other.term_map()
        return all(abs(a_map.get(key, 0.0) - b_map.get(key, 0.0)) <= tol
                   for key in set(a_map) | set(b_map))

    def sample(self, rng):
        term = rng.choice(len(self.terms), p=[w for w, _, _ in self.terms])
        _, px, py = self.terms[term]
        return px.sample(rng), py.sample(rng)

    def to_dict(self):
        return {
            "n": int(self.n),
            "terms": [{"w": w, "x": px.to_dict(), "y": py.to_dict()} for w, px, py in self.terms],
        }

    @classmethod
    def from_dict(cls, data):
        joint = cls(tuple(
            (t["w"], DiscreteDistribution.from_dict(t["x"]), DiscreteDistribution.from_dict(t["y"]))
            for t in data["terms"]))
        if joint.n != int(data["n"]):
            raise ValueError(f"联合分布维度不一致: {joint.n} != {data['n']}")
        return joint


def uniform_grid_prior(n, points):
    """坐标取自网格点的均匀先验，x与y独立

    Args:
        n (int): 维度
        points: 网格点序列或网格点个数（在[0,1]上等距）
    """
    if isinstance(points, (int, np.integer)):
        if points < 2:
            raise ValueError("网格点数必须至少为2")
        points = np.linspace(0.0, 1.0, int(points))
    grid = DiscreteDistribution.uniform_grid(n, points)
    return JointDistribution.product(grid, grid)


@dataclass(frozen=True, eq=False)
class StrategyTable:
    """对手策略表：values[oi, oj] 为观测到(i, j)时对φ的估计"""

    n: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        size = 2 ** int(self.n)
        if values.shape != (size, size):
            raise ValueError(f"策略表形状必须为({size}, {size})，当前为{values.shape}")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @classmethod
    def from_mapping(cls, n, mapping):
        """从{(i元组, j元组): 估计值}构造，缺少任何结果都会报错"""
        outcomes = all_outcomes(n)
        values = np.empty((len(outcomes), len(outcomes)))
        for oi, i in enumerate(outcomes):
            for oj, j in enumerate(outcomes):
                key = (tuple(int(v) for v in i), tuple(int(v) for v in j))
                if key not in mapping:
                    raise ValueError(f"策略表缺少结果 {key}")
                values[oi, oj] = float(mapping[key])
        return cls(n, values)

    def estimate(self, i, j):
        return float(self.values[outcome_index(i), outcome_index(j)])

    def shifted(self, c):
        return StrategyTable(self.n, self.values + c)

    def scaled(self, factor):
        return StrategyTable(self.n, self.values * factor)

    def check_complete(self):
        if not np.all(np.isfinite(self.values)):
            missing = int(np.sum(~np.isfinite(self.values)))
            raise ValueError(f"策略表有{missing}个结果缺少估计值")

    def to_dict(self):
        return {"n": int(self.n), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(int(data["n"]), np.asarray(data["values"], dtype=float))


@dataclass(frozen=True)
class OutcomeMoments:
    """全部结果对上的精确积分

    Z[oi, oj] = ∫ P(i|x)P(j|y) dJ
    N[oi, oj] = ∫ φ(x, y) P(i|x)P(j|y) dJ
    e_phi = E_J[φ]，e_phi2 = E_J[φ²]
    """

    Z: np.ndarray
    N: np.ndarray
    e_phi: float
    e_phi2: float

    def with_offset(self, c):
        """φ → φ + c"""
        if c == 0:
            return self
        return OutcomeMoments(self.Z, self.N + c * self.Z, self.e_phi + c,
                              self.e_phi2 + 2.0 * c * self.e_phi + c * c)


def _check_oracle_size(joint):
    if joint.n > MAX_ORACLE_N:
        raise ValueError(f"n = {joint.n} 超过贝叶斯预言机上限 {MAX_ORACLE_N}")
    if joint.size > MAX_ORACLE_COMPONENTS:
        raise ValueError(f"联合分布分量数 {joint.size} 超过上限 {MAX_ORACLE_COMPONENTS}")


def _marginal_moments(dist, k):
    """混合分布的信道矩：P̄(2^n,)、D̄(2^n, n)、二阶矩矩阵S(n, n)、均值"""
    lower, upper = dist.bounds()
    moments = outcome_moments(lower, upper, k)
    w = dist.weights
    mids = (lower + upper) / 2.0
    spans = upper - lower
    second = np.einsum('c,cl,cm->lm', w, mids, mids) + np.diag(w @ (spans ** 2) / 12.0)
    return w @ moments["P"], np.einsum('c,col->ol', w, moments["D"]), second, w @ mids


def outcome_table_moments(joint, k, phi=PHI):
    """按固定求和顺序逐项累加全部结果上的积分"""
    _check_oracle_size(joint)
    k = check_k(k)
    n = joint.n
    size = 2 ** n
    Z = np.zeros((size, size))
    N = np.zeros((size, size))
    e_phi = 0.0
    e_phi2 = 0.0
    for w, px, py in joint.terms:
        Px, Dx, Sx, mx = _marginal_moments(px, k)
        Py, Dy, Sy, my = _marginal_moments(py, k)
        Z += w * np.outer(Px, Py)
        N += w * (Dx @ Dy.T) / n
        e_phi += w * float(mx @ my) / n
        e_phi2 += w * float(np.sum(Sx * Sy)) / (n * n)
    return OutcomeMoments(Z, N, e_phi, e_phi2).with_offset(getattr(phi, 'offset', 0.0))


def posterior_mean(joint, i, j, k, phi=PHI):
    """后验均值 E[φ(x, y) | i, j]

    Raises:
        ZeroEvidenceError: 观测(i, j)在J下的证据为0
    """
    if len(i) != joint.n or len(j) != joint.n:
        raise ValueError(f"观测长度与分布维度{joint.n}不一致")
    moments = outcome_table_moments(joint, k, phi)
    oi, oj = outcome_index(i), outcome_index(j)
    evidence = moments.Z[oi, oj]
    if evidence <= ZERO_EVIDENCE:
        raise ZeroEvidenceError(f"观测 i={list(i)}, j={list(j)} 的证据为0")
    return float(moments.N[oi, oj] / evidence)


def _mse_from_moments(values, moments):
    return float(np.sum(values * values * moments.Z - 2.0 * values * moments.N) + moments.e_phi2)


def _mmse_table(moments, n):
    reachable = moments.Z > ZERO_EVIDENCE
    values = np.full(moments.Z.shape, moments.e_phi)
    values[reachable] = moments.N[reachable] / moments.Z[reachable]
    mmse = moments.e_phi2 - float(np.sum(moments.N[reachable] ** 2 / moments.Z[reachable]))
    return StrategyTable(n, values), max(mmse, 0.0)


def mmse_strategy(joint, k, phi=PHI):
    """最小均方误差策略

    零证据结果的估计值取先验均值 E_J[φ]

    Returns:
        tuple: (StrategyTable, float) 策略表及其均方误差
    """
    moments = outcome_table_moments(joint, k, phi)
    table, mmse = _mmse_table(moments, joint.n)
    logger.debug(f"MMSE策略计算完成: n={joint.n}, k={k}, mmse={mmse:.6g}")
    return table, mmse


def strategy_mse(table, joint, k, phi=PHI):
    """策略表在J和信道下的均方误差 E[(ω(i,j) - φ(x,y))²]"""
    if table.n != joint.n:
        raise ValueError(f"策略表维度{table.n}与分布维度{joint.n}不一致")
    table.check_complete()
    moments = outcome_table_moments(joint, k, phi)
    return max(_mse_from_moments(table.values, moments), 0.0)


def omega_t_table(n, k):
    """无偏估计器 ω_T 的策略表"""
    k = check_k(k)
    outcomes = all_outcomes(n).astype(float)
    return StrategyTable(n, k * k * (outcomes @ outcomes.T) / n)


@dataclass
class DegradationReport:
    """退化性检验报告"""

    n: int
    k: float
    mse_unbiased: float
    mmse: float
    ratio: float = None
    flags: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "n": self.n,
            "k": self.k,
            "mse_unbiased": self.mse_unbiased,
            "mmse": self.mmse,
            "ratio": ratio_to_json(self.ratio),
            "flags": dict(self.flags),
        }


def check_degradation(joint, k, phi=PHI, tol=1e-15):
    """检验 T_k 是否构成退化：ratio = MSE(ω_T) / MMSE > 1

    MMSE为0（例如Dirac先验）时比值无定义，标记为degenerate
    """
    k = check_k(k)
    moments = outcome_table_moments(joint, k, phi)
    unbiased = omega_t_table(joint.n, k)
    if getattr(phi, 'offset', 0.0):
        unbiased = unbiased.shifted(phi.offset)
    mse_unbiased = max(_mse_from_moments(unbiased.values, moments), 0.0)
    _, mmse = _mmse_table(moments, joint.n)
    report = DegradationReport(n=joint.n, k=k, mse_unbiased=mse_unbiased, mmse=mmse)
    if mmse <= tol:
        report.flags = {"degenerate": True, "degradation": False}
        logger.warning(f"MMSE为0，退化比值无定义 (n={joint.n}, k={k})")
    else:
        report.ratio = mse_unbiased / mmse
        report.flags = {"degenerate": False, "degradation": bool(report.ratio > 1.0)}
        logger.info(f"退化检验: n={joint.n}, k={k}, ratio={report.ratio:.6f}")
    return report


def common_permutation_group(n):
    """同时作用于x和y的坐标置换群 {(π, π) : π ∈ S_n}"""
    return [(pi, pi) for pi in all_permutations(n)]


def _check_closed(group):
    members = {(a.mapping, b.mapping) for a, b in group}
    for a_x, a_y in group:
        for b_x, b_y in group:
            if (a_x.compose(b_x).mapping, a_y.compose(b_y).mapping) not in members:
                raise ValueError("置换对集合在复合下不封闭，不构成群")


def group_average(joint, group):
    """群平均 R_G(J) = (1/|G|) Σ_{τ∈G} J∘τ

    Args:
        joint (JointDistribution): 联合分布
        group: [(τx, τy), ...]置换对列表，必须在复合下封闭
    """
    group = list(group)
    if not group:
        raise ValueError("置换群不能为空")
    _check_closed(group)
    averaged = JointDistribution.uniform_mixture(
        [joint.permuted(tau_x, tau_y) for tau_x, tau_y in group])
    return averaged.merged()


@dataclass
class IndistReport:
    """α-不可区分性检验报告"""

    lhs: float
    rhs: float
    ratio: float
    alpha: float
    passed: bool
    flags: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "lhs": self.lhs,
            "rhs": self.rhs,
            "ratio": ratio_to_json(self.ratio),
            "alpha": self.alpha,
            "pass": self.passed,
            "flags": dict(self.flags),
        }


def check_indistinguishability(family, k, phi=PHI, alpha=1.5, tol=1e-15):
    """α-不可区分性检验

    LHS为族内均匀混合的MMSE，RHS为各成员MMSE的平均；ratio = LHS/RHS > α 时通过。
    RHS = 0 且 LHS > 0 时 ratio = +∞；两者都为0时 ratio = 1（均标记为degenerate）。
    """
    family = list(family)
    if not family:
        raise ValueError("分布族不能为空")
    if len(family) > MAX_FAMILY_SIZE:
        raise ValueError(f"分布族大小{len(family)}超过上限{MAX_FAMILY_SIZE}")
    if not alpha > 1.0:
        raise ValueError(f"alpha必须大于1，当前为{alpha}")
    member_mmse = [mmse_strategy(member, k, phi)[1] for member in family]
    _, lhs = mmse_strategy(JointDistribution.uniform_mixture(family), k, phi)
    rhs = float(np.mean(member_mmse))
    degenerate = any(m <= tol for m in member_mmse)
    if rhs <= tol:
        ratio = math.inf if lhs > tol else 1.0
    else:
        ratio = lhs / rhs
    report = IndistReport(lhs=lhs, rhs=rhs, ratio=ratio, alpha=float(alpha),
                          passed=bool(ratio > alpha), flags={"degenerate": degenerate})
    logger.info(f"不可区分性检验: |family|={len(family)}, ratio={ratio:.6g}, alpha={alpha}")
    return report
