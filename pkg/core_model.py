#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
核心模型模块

定义参数向量、置换、盒型离散分布、评估函数φ，以及对称投影、
远离度（remoteness）和整理置换（tidying permutation）等对称性工具。

约定：
- 置换内部使用0起始的映射，序列化时使用1起始
- apply_permutation(σ, v)[l] = v[σ(l)]
- compose(σ, τ)[l] = τ[σ[l]]，因此 apply(compose(σ, τ), v) = apply(σ, apply(τ, v))
- Φ∘σ 的样本为 apply(σ⁻¹, X)，X ~ Φ
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np

from utils import get_logger

logger = get_logger("core_model")

TOLERANCE = 1e-12
# 对称群枚举的最大维度（n!规模）
MAX_ENUM_N = 8


def as_parameter_vector(coords):
    """校验并转换参数向量（每个坐标都在[0,1]内）

    Args:
        coords: 实数序列

    Returns:
        numpy.ndarray: float64向量

    Raises:
        ValueError: 坐标越界或长度为0
    """
    x = np.asarray(coords, dtype=float).reshape(-1)
    if x.size < 1:
        raise ValueError("参数向量长度必须至少为1")
    if np.any(x < 0.0) or np.any(x > 1.0) or not np.all(np.isfinite(x)):
        raise ValueError(f"参数向量坐标必须在[0,1]内: {x}")
    return x


def _check_same_length(a, b):
    if len(a) != len(b):
        raise ValueError(f"向量长度不一致: {len(a)} != {len(b)}")


@dataclass(frozen=True)
class Permutation:
    """{0..n-1}上的置换，mapping[l] = σ(l)"""

    mapping: tuple

    def __post_init__(self):
        mapping = tuple(int(v) for v in self.mapping)
        if sorted(mapping) != list(range(len(mapping))):
            raise ValueError(f"不是合法的置换: {mapping}")
        object.__setattr__(self, 'mapping', mapping)

    @classmethod
    def identity(cls, n):
        return cls(tuple(range(n)))

    @classmethod
    def transposition(cls, n, a, b):
        """交换a、b两个位置（0起始）"""
        mapping = list(range(n))
        mapping[a], mapping[b] = mapping[b], mapping[a]
        return cls(tuple(mapping))

    @classmethod
    def from_one_based(cls, indices):
        return cls(tuple(int(v) - 1 for v in indices))

    def to_one_based(self):
        return [v + 1 for v in self.mapping]

    @property
    def n(self):
        return len(self.mapping)

    def inverse(self):
        inv = [0] * self.n
        for position, image in enumerate(self.mapping):
            inv[image] = position
        return Permutation(tuple(inv))

    def compose(self, other):
        """返回 self∘other，满足 apply(self∘other, v) = apply(self, apply(other, v))"""
        if other.n != self.n:
            raise ValueError(f"置换长度不一致: {self.n} != {other.n}")
        return Permutation(tuple(other.mapping[v] for v in self.mapping))

    def is_identity(self):
        return self.mapping == tuple(range(self.n))

    def as_array(self):
        return np.asarray(self.mapping, dtype=np.int64)


def compose(sigma, tau):
    return sigma.compose(tau)


def invert(sigma):
    return sigma.inverse()


def all_permutations(n):
    """按字典序枚举S_n"""
    for mapping in itertools.permutations(range(n)):
        yield Permutation(mapping)


def apply_permutation(sigma, v):
    """置换作用：result[l] = v[σ(l)]

    Args:
        sigma (Permutation): 置换
        v: 向量（参数向量或比特向量）

    Returns:
        numpy.ndarray: 置换后的向量
    """
    arr = np.asarray(v)
    _check_same_length(sigma.mapping, arr)
    return arr[sigma.as_array()]


def evaluate_phi(x, y):
    """评估函数 φ(x, y) = x·y / n"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_same_length(x, y)
    return float(np.dot(x, y) / len(x))


@dataclass(frozen=True)
class InnerProductEvaluation:
    """φ(x, y) = x·y/n + offset

    offset只用于验证估计器的平移性质，协议本身使用offset = 0
    """

    offset: float = 0.0

    def __call__(self, x, y):
        return evaluate_phi(x, y) + self.offset


PHI = InnerProductEvaluation()


def clipped_bounds(centers, widths):
    """盒子 center ± width/2 截断到[0,1]后的上下界"""
    centers = np.asarray(centers, dtype=float)
    half = np.asarray(widths, dtype=float)[..., None] / 2.0
    return np.clip(centers - half, 0.0, 1.0), np.clip(centers + half, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """[0,1]^n上轴对齐均匀盒子的有限加权混合

    width = 0 的分量表示Dirac点质量；每个盒子截断到[0,1]^n后在其内部均匀
    """

    weights: np.ndarray
    centers: np.ndarray
    widths: np.ndarray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        widths = np.asarray(self.widths, dtype=float).reshape(-1)
        if not (len(weights) == len(centers) == len(widths)) or len(weights) == 0:
            raise ValueError("分布分量的权重、中心和宽度数量必须一致且非空")
        if np.any(weights <= 0):
            raise ValueError("分量权重必须为正")
        if abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError(f"分量权重之和必须为1，当前为{weights.sum()}")
        if np.any(widths < 0):
            raise ValueError("盒子宽度不能为负")
        if np.any(centers < 0) or np.any(centers > 1):
            raise ValueError("盒子中心必须在[0,1]^n内")
        weights = weights / weights.sum()
        for name, value in (('weights', weights), ('centers', centers), ('widths', widths)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    # --- 构造 ---

    @classmethod
    def dirac(cls, x):
        x = as_parameter_vector(x)
        return cls(np.ones(1), x[None, :], np.zeros(1))

    @classmethod
    def box(cls, center, width):
        center = as_parameter_vector(center)
        return cls(np.ones(1), center[None, :], np.array([float(width)]))

    @classmethod
    def from_components(cls, components):
        """从[(weight, center, width), ...]构造"""
        weights = [float(c[0]) for c in components]
        centers = [np.asarray(c[1], dtype=float) for c in components]
        widths = [float(c[2]) for c in components]
        return cls(np.asarray(weights), np.vstack(centers), np.asarray(widths))

    @classmethod
    def mixture(cls, parts):
        """[(weight, DiscreteDistribution), ...]的混合"""
        total = sum(w for w, _ in parts)
        weights = np.concatenate([np.asarray(d.weights) * (w / total) for w, d in parts])
        centers = np.vstack([d.centers for _, d in parts])
        widths = np.concatenate([d.widths for _, d in parts])
        return cls(weights, centers, widths)

    @classmethod
    def uniform_grid(cls, n, points):
        """网格点^n上的均匀Dirac混合"""
        grid = list(itertools.product(points, repeat=n))
        centers = np.asarray(grid, dtype=float)
        return cls(np.full(len(grid), 1.0 / len(grid)), centers, np.zeros(len(grid)))

    # --- 基本属性 ---

    @property
    def n(self):
        return self.centers.shape[1]

    @property
    def size(self):
        return len(self.weights)

    def bounds(self):
        return clipped_bounds(self.centers, self.widths)

    def midpoints(self):
        """截断后盒子的中点（多线性函数在盒子上的积分等于其在中点的取值）"""
        lower, upper = self.bounds()
        return (lower + upper) / 2.0

    def spans(self):
        lower, upper = self.bounds()
        return upper - lower

    def mean(self):
        return self.weights @ self.midpoints()

    def is_dirac(self):
        return bool(np.all(self.widths == 0))

    # --- 变换 ---

    def permuted(self, sigma):
        """返回 Φ∘σ（样本为 apply(σ⁻¹, X)）"""
        if sigma.n != self.n:
            raise ValueError(f"置换长度{sigma.n}与分布维度{self.n}不一致")
        inv = sigma.inverse().as_array()
        return DiscreteDistribution(self.weights, self.centers[:, inv], self.widths)

    def merged(self):
        """合并中心与宽度完全相同的分量"""
        merged = {}
        order = []
        for w, c, h in zip(self.weights, self.centers, self.widths):
            key = (tuple(c.tolist()), float(h))
            if key not in merged:
                merged[key] = 0.0
                order.append(key)
            merged[key] += float(w)
        return DiscreteDistribution(
            np.asarray([merged[k] for k in order]),
            np.asarray([k[0] for k in order]),
            np.asarray([k[1] for k in order]),
        )

    def shifted(self, delta):
        """所有中心平移delta（截断到[0,1]）"""
        centers = np.clip(self.centers + delta, 0.0, 1.0)
        return DiscreteDistribution(self.weights, centers, self.widths)

    # --- 采样 ---

    def sample(self, rng):
        """按权重选择分量，再在截断盒子内均匀采样"""
        component = rng.choice(self.size, p=self.weights)
        lower, upper = self.bounds()
        return lower[component] + rng.random(self.n) * (upper[component] - lower[component])

    # --- 序列化 ---

    def to_dict(self):
        return {
            "n": int(self.n),
            "components": [
                {"w": float(w), "center": [float(v) for v in c], "width": float(h)}
                for w, c, h in zip(self.weights, self.centers, self.widths)
            ],
        }

    @classmethod
    def from_dict(cls, data):
        components = data["components"]
        dist = cls.from_components([(c["w"], c["center"], c["width"]) for c in components])
        if dist.n != int(data["n"]):
            raise ValueError(f"分布维度不一致: {dist.n} != {data['n']}")
        return dist

    def component_map(self):
        """{(中心, 宽度): 权重}，相同分量已合并"""
        result = {}
        for w, c, h in zip(self.weights, self.centers, self.widths):
            key = (tuple(np.round(c, 12).tolist()), round(float(h), 12))
            result[key] = result.get(key, 0.0) + float(w)
        return result

    def key(self):
        """与分量顺序无关的可哈希表示"""
        return tuple(sorted((c, h, round(w, 12)) for (c, h), w in self.component_map().items()))

    def same_as(self, other, tol=TOLERANCE):
        """在合并后的分量集合上比较两个分布"""
        a_map, b_map = self.component_map(), other.component_map()
        keys = set(a_map) | set(b_map)
        return all(abs(a_map.get(k, 0.0) - b_map.get(k, 0.0)) <= tol for k in keys)


def _check_enumerable(n):
    if n > MAX_ENUM_N:
        raise ValueError(f"n = {n} 超过对称群枚举上限 {MAX_ENUM_N}")


def symmetric_projection(phi):
    """对称投影 Φ̄ = (1/n!) Σ_σ Φ∘σ

    Args:
        phi (DiscreteDistribution): 分布

    Returns:
        DiscreteDistribution: 对称化后的分布（已合并相同分量）
    """
    _check_enumerable(phi.n)
    parts = [(1.0, phi.permuted(sigma)) for sigma in all_permutations(phi.n)]
    return DiscreteDistribution.mixture(parts).merged()


def _continuous_l1(lower, upper, density, active, axis, volume):
    """在盒子分划的公共细化上精确计算 ∫|Σ density| 的递归扫描"""
    if len(active) == 1:
        idx = active[0]
        rest = np.prod(upper[idx, axis:] - lower[idx, axis:])
        return abs(density[idx]) * volume * rest
    if axis == lower.shape[1]:
        return abs(density[active].sum()) * volume
    edges = np.unique(np.concatenate([lower[active, axis], upper[active, axis]]))
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi <= lo:
            continue
        covering = active[(lower[active, axis] <= lo) & (upper[active, axis] >= hi)]
        if len(covering) == 0:
            continue
        total += _continuous_l1(lower, upper, density, covering, axis + 1, volume * (hi - lo))
    return total


def total_variation(a, b):
    """两个盒型混合分布之间的全变差距离（精确计算）"""
    if a.n != b.n:
        raise ValueError("分布维度不一致")
    # Dirac部分逐点比较
    atoms = {}
    for sign, dist in ((1.0, a), (-1.0, b)):
        for w, c, h in zip(dist.weights, dist.centers, dist.widths):
            if h == 0:
                key = tuple(c.tolist())
                atoms[key] = atoms.get(key, 0.0) + sign * float(w)
    atom_part = sum(abs(v) for v in atoms.values())

    lowers, uppers, densities = [], [], []
    for sign, dist in ((1.0, a), (-1.0, b)):
        mask = dist.widths > 0
        if not np.any(mask):
            continue
        lower, upper = dist.bounds()
        volume = np.prod(upper[mask] - lower[mask], axis=1)
        lowers.append(lower[mask])
        uppers.append(upper[mask])
        densities.append(sign * dist.weights[mask] / volume)
    continuous_part = 0.0
    if lowers:
        lower = np.vstack(lowers)
        upper = np.vstack(uppers)
        density = np.concatenate(densities)
        continuous_part = _continuous_l1(lower, upper, density, np.arange(len(density)), 0, 1.0)
    return 0.5 * (atom_part + continuous_part)


def remoteness(phi):
    """分布与其对称投影之间的全变差距离，取值[0,1]"""
    _check_enumerable(phi.n)
    value = total_variation(phi, symmetric_projection(phi))
    return float(min(max(value, 0.0), 1.0))


def certified_remoteness(phi):
    """强有序分布的远离度证书（适用于任意n）

    若所有分量按同一坐标顺序严格排列，且排序后相邻中心坐标的间隔都大于盒宽，
    则每个分量都位于同一个开序锥内，与其非平凡置换像不相交，远离度恰为 1 - 1/n!。

    Returns:
        float或None: 满足条件时返回精确远离度，否则返回None
    """
    if phi.n == 1:
        return 0.0
    order = np.argsort(-phi.centers[0], kind='stable')
    for c, h in zip(phi.centers, phi.widths):
        gaps = -np.diff(c[order])
        if np.any(gaps <= h):
            return None
    return 1.0 - 1.0 / math.factorial(phi.n)


def tidying_permutation(phi):
    """整理置换σ_Φ：使 apply(σ_Φ⁻¹, E_Φ[x]) 非增，平局时原下标小者在前

    Args:
        phi (DiscreteDistribution): 分布

    Returns:
        Permutation: 整理置换（Φ∘σ_Φ为规范形式）
    """
    mean = phi.mean()
    order = np.argsort(-mean, kind='stable')
    return Permutation(tuple(order.tolist())).inverse()


def canonical_form(phi):
    """规范形式 Φ∘σ_Φ"""
    return phi.permuted(tidying_permutation(phi))
