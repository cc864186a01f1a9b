#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
深度随机生成器（DRG）模块

1. 从ζ(α)族中采样分布：坐标单调有序（要求远离度时强有序）、盒宽不低于下限、远离其对称投影
2. 递归构造：每一步针对历史分布混合的最优策略ω*，在网格上寻找一对
   Dirac点（展宽为最小宽度的盒子），使对手误差至少为合法双方误差的alpha_gap倍

经典随机性来自主种子与若干无界递增计数器，状态可以JSON形式持久化并复现。
"""

import concurrent.futures
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from bayes_oracle import JointDistribution, mmse_strategy, uniform_grid_prior
from core_model import (
    MAX_ENUM_N,
    PHI,
    DiscreteDistribution,
    certified_remoteness,
    remoteness,
    tidying_permutation,
)
from degradation_channel import all_outcomes, check_k, outcome_indices, outcome_moments
from utils import derive_stream, get_logger, ratio_from_json, ratio_to_json

logger = get_logger("deep_random")

DEFAULT_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)
ZETA_MAX_TRIES = 10 ** 4
# 强有序剖面中相邻坐标间隔相对盒宽的倍数
GAP_FACTOR = 1.05
GAP_TOL = 1e-15


class ZetaSamplingError(RuntimeError):
    """ζ(α)拒绝采样预算耗尽或参数不可满足"""


class DefeatShortfallError(RuntimeError):
    """网格上没有满足alpha_gap的击败对"""


class DrgStateError(ValueError):
    """DRG状态文档损坏或不一致"""


@dataclass(frozen=True)
class ZetaParams:
    """ζ(α)族参数

    Attributes:
        alpha_remote: 远离度下限，取值[0,1)
        min_width: 盒宽下限（非Dirac约束），必须为正
        bumps: 每个分布的盒子数量
    """

    alpha_remote: float = 0.0
    min_width: float = 0.01
    bumps: int = 3

    def __post_init__(self):
        if not 0.0 <= self.alpha_remote < 1.0:
            raise ValueError(f"alpha_remote必须在[0,1)内，当前为{self.alpha_remote}")
        if not self.min_width > 0.0:
            raise ValueError(f"min_width必须为正，当前为{self.min_width}")
        if int(self.bumps) < 1:
            raise ValueError(f"bumps必须至少为1，当前为{self.bumps}")

    def to_dict(self):
        return {"alpha_remote": self.alpha_remote, "min_width": self.min_width, "bumps": int(self.bumps)}

    @classmethod
    def from_dict(cls, data):
        return cls(alpha_remote=float(data.get("alpha_remote", 0.0)),
                   min_width=float(data.get("min_width", 0.01)),
                   bumps=int(data.get("bumps", 3)))


def _strict_profile(n, width, rng):
    """生成严格递减的坐标水平，相邻间隔 ≥ GAP_FACTOR·width

    总跨度和起点都随机，使不同分布的均值和离散程度各不相同。调用方保证
    (n-1)·GAP_FACTOR·width < 1。

    Returns:
        tuple: (递减水平, 向下平移余量, 向上平移余量)
    """
    spacing = GAP_FACTOR * width
    min_span = (n - 1) * spacing
    span = rng.uniform(min_span, 1.0)
    offset = rng.uniform(0.0, 1.0 - span)
    extra = (span - min_span) * rng.dirichlet(np.ones(n - 1)) if n > 1 else np.zeros(0)
    ascending = offset + np.concatenate([[0.0], np.cumsum(spacing + extra)])
    ascending = np.minimum(ascending, 1.0)
    return ascending[::-1], ascending[0], 1.0 - ascending[-1]


def _free_profile(n, rng):
    """跨度和起点随机的单调递减水平，相邻盒子允许重叠"""
    span = rng.uniform(0.0, 1.0)
    offset = rng.uniform(0.0, 1.0 - span)
    ascending = offset + span * np.sort(rng.random(n))
    return ascending[::-1], ascending[0], 1.0 - ascending[-1]


def _needs_certificate(p, n):
    """只有alpha_remote > 0且强有序间隔可行时才使用严格剖面"""
    return p.alpha_remote > 0 and n > 1 and (n - 1) * GAP_FACTOR * p.min_width < 1.0


def _zeta_candidate(p, n, rng):
    """一次候选：所有盒子共享同一递减剖面，整体沿对角线平移，再施加随机坐标置换

    alpha_remote = 0时剖面不要求强有序，每次抽取的均值与跨度都不同；
    否则使用强有序剖面，远离度由证书或精确枚举检查。
    """
    if _needs_certificate(p, n):
        feasible_width = 1.0 / (GAP_FACTOR * (n - 1))
        width = rng.uniform(p.min_width, max(min(1.5 * p.min_width, feasible_width), p.min_width))
        levels, below, above = _strict_profile(n, width, rng)
    else:
        width = rng.uniform(p.min_width, 1.5 * p.min_width)
        levels, below, above = _free_profile(n, rng)
    shifts = rng.uniform(-below, above, size=p.bumps)
    weights = rng.dirichlet(np.ones(p.bumps))
    perm = rng.permutation(n)
    centers = np.clip(levels[perm][None, :] + shifts[:, None], 0.0, 1.0)
    return DiscreteDistribution(weights, centers, np.full(p.bumps, width))


def zeta_remoteness(phi):
    """先尝试强有序证书，否则在n ≤ 8时精确计算；都不可用时返回None"""
    value = certified_remoteness(phi)
    if value is None and phi.n <= MAX_ENUM_N:
        value = remoteness(phi)
    return value


def sample_zeta(p, n, rng, max_tries=ZETA_MAX_TRIES):
    """从ζ(α)中拒绝采样一个分布

    Args:
        p (ZetaParams): 族参数
        n (int): 维度
        rng: numpy随机数生成器
        max_tries (int): 拒绝采样预算

    Returns:
        DiscreteDistribution: 远离度 ≥ alpha_remote 且所有盒宽 ≥ min_width 的分布

    Raises:
        ZetaSamplingError: n = 1且alpha_remote > 0，远离度下限超过上界，或预算耗尽
    """
    if p.alpha_remote > 0:
        if n == 1:
            raise ZetaSamplingError("n = 1时对称群平凡，远离度恒为0，无法满足alpha_remote > 0")
        ceiling = 1.0 - 1.0 / math.factorial(n)
        if p.alpha_remote > ceiling:
            raise ZetaSamplingError(f"alpha_remote = {p.alpha_remote} 超过远离度上界 {ceiling}")
        if n > MAX_ENUM_N and (n - 1) * GAP_FACTOR * p.min_width >= 1.0:
            raise ZetaSamplingError(f"n = {n} 时 min_width = {p.min_width} 过大，无法构造可证明的强有序分布")
    for attempt in range(1, max_tries + 1):
        phi = _zeta_candidate(p, n, rng)
        if p.alpha_remote == 0:
            return phi
        value = zeta_remoteness(phi)
        if value is not None and value >= p.alpha_remote:
            if attempt > 1:
                logger.debug(f"ζ采样第{attempt}次接受，远离度={value:.4f}")
            return phi
    raise ZetaSamplingError(f"ζ(α)拒绝采样{max_tries}次仍未满足远离度下限 {p.alpha_remote} (n={n})")


def is_zeta_compliant(phi, p):
    if np.any(phi.widths < p.min_width - 1e-12):
        return False
    if p.alpha_remote == 0:
        return True
    value = zeta_remoteness(phi)
    return value is not None and value >= p.alpha_remote - 1e-12


@dataclass(frozen=True)
class DrgParams:
    """DRG参数"""

    n: int = 2
    k: float = 2.0
    alpha_gap: float = 1.2
    grid: tuple = DEFAULT_GRID
    zeta: ZetaParams = field(default_factory=lambda: ZetaParams(alpha_remote=0.0, min_width=0.05, bumps=1))
    counters: int = 2
    workers: int = 1

    def __post_init__(self):
        if not 1 <= self.n <= 4:
            raise ValueError(f"DRG依赖贝叶斯预言机，n必须在1..4之间，当前为{self.n}")
        check_k(self.k)
        if not self.alpha_gap > 1.0:
            raise ValueError(f"alpha_gap必须大于1，当前为{self.alpha_gap}")
        if len(self.grid) == 0:
            raise ValueError("网格不能为空")
        if self.counters < 1:
            raise ValueError("计数器数量必须至少为1")
        object.__setattr__(self, 'grid', tuple(float(v) for v in self.grid))

    def to_dict(self):
        return {"n": self.n, "k": self.k, "alpha_gap": self.alpha_gap, "grid": list(self.grid),
                "zeta": self.zeta.to_dict(), "counters": self.counters}


def best_response(history, k, phi=PHI, n=None, grid=DEFAULT_GRID):
    """针对历史分布均匀混合的MMSE策略表；历史为空时使用网格均匀先验"""
    if history:
        prior = JointDistribution.uniform_mixture(history)
    else:
        if n is None:
            raise ValueError("历史为空时必须给出维度n")
        prior = uniform_grid_prior(n, list(grid))
    table, _ = mmse_strategy(prior, k, phi)
    return table


@dataclass(frozen=True, eq=False)
class _BoxMoments:
    """单个盒型分布在全部结果和全部比特向量u上的矩"""

    dist: DiscreteDistribution
    sigma: object
    P: np.ndarray
    M1: np.ndarray
    M2: np.ndarray

    @classmethod
    def build(cls, dist, k):
        lower, upper = dist.bounds()
        moments = outcome_moments(lower, upper, k, second=True)
        w = dist.weights
        D = np.einsum('c,cbl->bl', w, moments["D"])
        Q = np.einsum('c,cblm->blm', w, moments["Q"])
        U = all_outcomes(dist.n).astype(float)
        M1 = D @ U.T
        M2 = np.einsum('blm,ul,um->bu', Q, U, U)
        return cls(dist, tidying_permutation(dist), w @ moments["P"], M1, M2)


@dataclass(frozen=True)
class DefeatMeasure:
    ratio: float
    opponent_error: float
    legit_gap: float


def _ratio(opponent_error, legit_gap, tol=1e-15):
    if legit_gap <= tol:
        return math.inf if opponent_error > tol else 0.0
    return opponent_error / legit_gap


def _measure(values, bx, by, k):
    """有利情形信道下的对手误差 E[(ω*/k - V_A)²] 与合法误差 E[(V_B - V_A)²]"""
    n = bx.dist.n
    outcomes = all_outcomes(n)
    pi_a = bx.sigma.compose(by.sigma.inverse())
    pi_b = by.sigma.compose(bx.sigma.inverse())
    ua = outcome_indices(outcomes[:, pi_a.as_array()])
    vb = outcome_indices(outcomes[:, pi_b.as_array()])
    c = values / k
    m1x = bx.M1[:, ua]
    m2x = bx.M2[:, ua]
    m1y = by.M1[:, vb]
    opponent = np.sum(c * c * np.outer(bx.P, by.P)
                      - 2.0 * c * m1x * by.P[None, :] / n
                      + m2x * by.P[None, :] / (n * n))
    gap = (by.P @ bx.M2.sum(axis=0)[ua] + bx.P @ by.M2.sum(axis=0)[vb]
           - 2.0 * np.sum(m1x * m1y.T)) / (n * n)
    opponent = max(float(opponent), 0.0)
    gap = max(float(gap), 0.0)
    return DefeatMeasure(_ratio(opponent, gap), opponent, gap)


def defeat_ratio(table, phi_x, phi_y, k):
    """策略表ω*面对分布对(Φx, Φy)时的击败比值（精确枚举）"""
    k = check_k(k)
    if table.n != phi_x.n or table.n != phi_y.n:
        raise ValueError("策略表与分布维度不一致")
    return _measure(table.values, _BoxMoments.build(phi_x, k), _BoxMoments.build(phi_y, k), k)


@dataclass
class DefeatResult:
    x: np.ndarray
    y: np.ndarray
    ratio: float
    opponent_error: float
    legit_gap: float
    shortfall: bool
    qualifying: int
    joint: JointDistribution

    def to_dict(self):
        return {
            "x": self.x.tolist(),
            "y": self.y.tolist(),
            "ratio": self.ratio,
            "opponent_error": self.opponent_error,
            "legit_gap": self.legit_gap,
            "shortfall": self.shortfall,
            "qualifying": self.qualifying,
        }


def _smoothed(point, width):
    return DiscreteDistribution.box(point, width)


def grid_candidates(grid, n, zeta, k):
    """网格上全部满足ζ下限的展宽盒子及其矩"""
    candidates = []
    for point in itertools.product(grid, repeat=n):
        dist = _smoothed(np.asarray(point, dtype=float), zeta.min_width)
        if is_zeta_compliant(dist, zeta):
            candidates.append((np.asarray(point, dtype=float), _BoxMoments.build(dist, k)))
    return candidates


def defeating_pair(omega, alpha_gap, grid, k, params, rng=None):
    """在网格上寻找击败ω*的分布对

    rng为None时返回比值最大的点对（网格顺序中第一个最大值）；
    否则在全部满足比值 ≥ alpha_gap 的点对中均匀选取。没有点对满足时返回最大比值点对并标记shortfall。
    """
    if len(grid) == 0:
        raise ValueError("网格不能为空")
    if not alpha_gap > 1.0:
        raise ValueError(f"alpha_gap必须大于1，当前为{alpha_gap}")
    k = check_k(k)
    candidates = grid_candidates(grid, omega.n, params.zeta, k)
    if not candidates:
        raise ValueError("网格上没有满足ζ下限的候选点")

    def scan_row(entry):
        _, bx = entry
        return [_measure(omega.values, bx, by, k) for _, by in candidates]

    if params.workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=params.workers) as executor:
            rows = list(executor.map(scan_row, candidates))
    else:
        rows = [scan_row(entry) for entry in candidates]

    measures = [m for row in rows for m in row]
    ratios = np.asarray([m.ratio for m in measures])
    qualifying = np.flatnonzero(ratios >= alpha_gap)
    shortfall = len(qualifying) == 0
    if shortfall or rng is None:
        chosen = int(np.argmax(ratios))
    else:
        chosen = int(qualifying[rng.integers(len(qualifying))])
    xi, yi = divmod(chosen, len(candidates))
    (x, bx), (y, by) = candidates[xi], candidates[yi]
    m = measures[chosen]
    if shortfall:
        logger.warning(f"网格上没有满足alpha_gap={alpha_gap}的点对，最大比值为{m.ratio:.4f}")
    return DefeatResult(x=x, y=y, ratio=m.ratio, opponent_error=m.opponent_error,
                        legit_gap=m.legit_gap, shortfall=shortfall, qualifying=len(qualifying),
                        joint=JointDistribution.product(bx.dist, by.dist))


@dataclass
class DrgState:
    """DRG状态：单写者，按步严格顺序推进"""

    master_seed: int
    counters: list
    history: list = field(default_factory=list)
    records: list = field(default_factory=list)
    entropy_bits: float = 0.0

    @property
    def step(self):
        return len(self.history)

    @classmethod
    def fresh(cls, master_seed, counters=2):
        return cls(master_seed=int(master_seed), counters=[0] * int(counters))

    def to_dict(self):
        return {
            "master_seed": int(self.master_seed),
            "step": self.step,
            "counters": [int(c) for c in self.counters],
            "history": [joint.to_dict() for joint in self.history],
            "records": [dict(r, ratio=ratio_to_json(r["ratio"])) for r in self.records],
            "entropy_bits": self.entropy_bits,
        }

    @classmethod
    def from_dict(cls, data):
        try:
            state = cls(
                master_seed=int(data["master_seed"]),
                counters=[int(c) for c in data["counters"]],
                history=[JointDistribution.from_dict(h) for h in data["history"]],
                records=[dict(r, ratio=ratio_from_json(r["ratio"])) for r in data.get("records", [])],
                entropy_bits=float(data.get("entropy_bits", 0.0)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DrgStateError(f"DRG状态文档无法解析: {e}") from e
        if int(data.get("step", state.step)) != state.step:
            raise DrgStateError(f"step = {data.get('step')} 与历史长度 {state.step} 不一致")
        state.validate()
        return state

    def validate(self):
        if any(c < 0 for c in self.counters) or not self.counters:
            raise DrgStateError("计数器必须为非空的非负整数列表")
        if self.records and len(self.records) != len(self.history):
            raise DrgStateError("记录数量与历史长度不一致")
        if any(c < self.step for c in self.counters):
            raise DrgStateError("计数器小于已执行的步数")
        if not 0 <= self.master_seed < 2 ** 64:
            raise DrgStateError("master_seed必须是64位无符号整数")


def drg_next(state, params):
    """执行一步递归构造

    Returns:
        tuple: (JointDistribution, DrgState) 新发出的分布对和推进后的状态

    Raises:
        DefeatShortfallError: 网格上没有满足alpha_gap的点对
    """
    state.validate()
    rng = derive_stream(state.master_seed, "drg", *state.counters)
    history = list(state.history)
    omega = best_response(history, params.k, n=params.n, grid=params.grid)
    result = defeating_pair(omega, params.alpha_gap, params.grid, params.k, params, rng=rng)
    if result.shortfall:
        raise DefeatShortfallError(
            f"第{state.step + 1}步没有满足alpha_gap={params.alpha_gap}的点对，最大比值{result.ratio:.4f}")
    record = {"ratio": result.ratio, "qualifying": result.qualifying,
              "x": result.x.tolist(), "y": result.y.tolist()}
    new_state = DrgState(
        master_seed=state.master_seed,
        counters=[c + 1 for c in state.counters],
        history=history + [result.joint],
        records=list(state.records) + [record],
        entropy_bits=state.entropy_bits + math.log2(result.qualifying),
    )
    logger.info(f"DRG第{new_state.step}步: x={record['x']}, y={record['y']}, "
                f"ratio={result.ratio:.4f}, 候选数={result.qualifying}")
    return result.joint, new_state


def run_drg(params, steps, master_seed, state=None):
    """从给定状态（默认全新状态）连续执行若干步"""
    state = state or DrgState.fresh(master_seed, params.counters)
    for _ in range(steps):
        _, state = drg_next(state, params)
    return state


@dataclass
class AuditReport:
    steps: int
    ratios: list
    min_ratio: float
    shortfalls: list
    passed: bool

    def to_dict(self):
        return {
            "steps": self.steps,
            "ratios": [ratio_to_json(r) for r in self.ratios],
            "min_ratio": ratio_to_json(self.min_ratio),
            "shortfalls": self.shortfalls,
            "pass": self.passed,
        }


def drg_audit(state, params, rel_tol=1e-9):
    """重放历史：对每一步重新计算最优策略与击败比值

    比值低于alpha_gap、与记录值不符或分布违反ζ下限的步骤都计为shortfall
    """
    state.validate()
    ratios = []
    shortfalls = []
    for m, joint in enumerate(state.history):
        if len(joint.terms) != 1:
            shortfalls.append({"step": m + 1, "reason": "not_a_pair"})
            ratios.append(0.0)
            continue
        _, phi_x, phi_y = joint.terms[0]
        omega = best_response(state.history[:m], params.k, n=params.n, grid=params.grid)
        measure = defeat_ratio(omega, phi_x, phi_y, params.k)
        ratios.append(measure.ratio)
        if measure.ratio < params.alpha_gap:
            shortfalls.append({"step": m + 1, "reason": "ratio_below_alpha_gap", "ratio": measure.ratio})
        if not (is_zeta_compliant(phi_x, params.zeta) and is_zeta_compliant(phi_y, params.zeta)):
            shortfalls.append({"step": m + 1, "reason": "zeta_violation"})
        if state.records:
            recorded = state.records[m]["ratio"]
            if math.isinf(recorded) or math.isinf(measure.ratio):
                same = recorded == measure.ratio
            else:
                same = abs(recorded - measure.ratio) <= rel_tol * max(1.0, abs(measure.ratio))
            if not same:
                shortfalls.append({"step": m + 1, "reason": "ratio_mismatch",
                                   "ratio": measure.ratio, "recorded": recorded})
    min_ratio = min(ratios) if ratios else None
    report = AuditReport(steps=state.step, ratios=ratios, min_ratio=min_ratio,
                         shortfalls=shortfalls, passed=not shortfalls)
    logger.info(f"DRG审计完成: {state.step}步, 最小比值={min_ratio}, 问题数={len(shortfalls)}")
    return report
