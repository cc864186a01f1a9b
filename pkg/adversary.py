#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
对手策略模块

对手是被动的：在实例化之前（精心准备阶段）固定自己的策略，之后只能读取公开记录。
策略输出对V_A的估计；对φ的估计器统一除以k。

内置策略：
- inner_product：k·(i·j)/n，在公共坐标置换下不变（Ω_#）
- dispersed_inner_product：对公开的四种置换组合取平均（Ω′_#）
- constant：常数估计（先验均值对照）
- rg_posterior：在群平均先验 R_G 下的贝叶斯后验（n ≤ 4）
- table：对假设先验的最优响应表（n ≤ 4）

NoiseFloorControl读取秘密，只用于测量信道本身的噪声下限，不属于对手策略。
"""

from dataclasses import dataclass

import numpy as np
import pandas as pd

from bayes_oracle import (
    MAX_ORACLE_N,
    JointDistribution,
    StrategyTable,
    common_permutation_group,
    group_average,
    mmse_strategy,
    posterior_mean,
    uniform_grid_prior,
)
from core_model import PHI, apply_permutation
from deep_random import ZetaParams, sample_zeta
from degradation_channel import as_bits, check_k
from psp_protocol import Transcript, binarize
from utils import derive_stream, get_logger

logger = get_logger("adversary")

COMMON_PERMUTATION = "common_permutation"
TRANSPOSITION = "transposition"

STRATEGY_KINDS = {
    "inner_product": (TRANSPOSITION, COMMON_PERMUTATION),
    "dispersed_inner_product": (TRANSPOSITION,),
    "constant": (TRANSPOSITION, COMMON_PERMUTATION),
    "rg_posterior": (TRANSPOSITION, COMMON_PERMUTATION),
    "table": (TRANSPOSITION,),
}
TABLE_KINDS = ("rg_posterior", "table")
PAIR_ORDER = {(1, 1): 0, (1, 0): 1, (0, 1): 2, (0, 0): 3}


def canonicalize_pair(i, j):
    """公共置换轨道的规范键：坐标对(i_l, j_l)按(11, 10, 01, 00)的顺序排列"""
    i = as_bits(i)
    j = as_bits(j)
    if len(i) != len(j):
        raise ValueError(f"向量长度不一致: {len(i)} != {len(j)}")
    pairs = sorted(zip(i.tolist(), j.tolist()), key=lambda p: PAIR_ORDER[p])
    return tuple(pairs)


def orbit_representative(key):
    """规范键对应的一个代表元(i, j)"""
    return tuple(p[0] for p in key), tuple(p[1] for p in key)


@dataclass(frozen=True)
class OpponentStrategy:
    """冻结的对手策略，只接受公开记录作为输入"""

    name: str
    kind: str
    n: int
    k: float
    value: float = None
    table: StrategyTable = None

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"未知的对手策略类型: {self.kind}")
        check_k(self.k)
        if self.kind == "constant" and self.value is None:
            raise ValueError("constant策略必须给出估计值")
        if self.kind in TABLE_KINDS:
            if self.table is None or self.table.n != self.n:
                raise ValueError(f"{self.kind}策略需要维度为{self.n}的策略表")
            self.table.check_complete()

    @property
    def invariance(self):
        return STRATEGY_KINDS[self.kind]

    def estimate(self, transcript):
        """对V_A的估计"""
        if not isinstance(transcript, Transcript):
            raise TypeError("对手策略只接受公开记录Transcript")
        if transcript.n != self.n:
            raise ValueError(f"公开记录维度{transcript.n}与策略维度{self.n}不一致")
        i = np.asarray(transcript.i, dtype=float)
        j = np.asarray(transcript.j, dtype=float)
        if self.kind == "inner_product":
            return float(self.k * np.dot(i, j) / self.n)
        if self.kind == "dispersed_inner_product":
            total = 0.0
            for alpha in transcript.muA:
                for beta in transcript.muB:
                    total += np.dot(apply_permutation(alpha.inverse(), i),
                                    apply_permutation(beta.inverse(), j))
            return float(self.k * total / (4.0 * self.n))
        if self.kind == "constant":
            return float(self.value)
        return self.table.estimate(transcript.i, transcript.j)


@dataclass(frozen=True)
class NoiseFloorControl:
    """读取双方秘密的作弊对照：σ_Φ⁻¹(x)·σ_A⁻¹(y)/(k·n)"""

    k: float
    name: str = "cheating_control"

    def estimate(self, record):
        a, b = record.secrets_a, record.secrets_b
        left = apply_permutation(a.sigma_phi.inverse(), a.x)
        right = apply_permutation(a.sigma_chosen.inverse(), b.x)
        return float(np.dot(left, right) / (self.k * len(a.x)))


def build_inner_product(n, k, name="inner_product"):
    return OpponentStrategy(name=name, kind="inner_product", n=n, k=k)


def build_dispersed_inner_product(n, k, name="dispersed_inner_product"):
    return OpponentStrategy(name=name, kind="dispersed_inner_product", n=n, k=k)


def build_constant(n, k, value=None, name="constant"):
    """默认估计值为[0,1]均匀先验下的 E[φ]/k = 1/(4k)"""
    value = 0.25 / k if value is None else float(value)
    return OpponentStrategy(name=name, kind="constant", n=n, k=k, value=value)


def build_rg_posterior(n, k, assumed_mixture, name="rg_posterior", phi=PHI):
    """在 R_G(假设先验) 下的后验均值表（G为公共坐标置换群）"""
    averaged = group_average(assumed_mixture, common_permutation_group(n))
    table, _ = mmse_strategy(averaged, k, phi)
    return OpponentStrategy(name=name, kind="rg_posterior", n=n, k=k, table=table.scaled(1.0 / k))


def build_table(n, k, assumed_mixture, name="table", phi=PHI):
    table, _ = mmse_strategy(assumed_mixture, k, phi)
    return OpponentStrategy(name=name, kind="table", n=n, k=k, table=table.scaled(1.0 / k))


def strategy_rg_posterior(transcript, assumed_mixture, k, phi=PHI):
    """在 R_G(假设先验) 下对φ的后验均值，只使用公开的(i, j)"""
    if not isinstance(transcript, Transcript):
        raise TypeError("对手策略只接受公开记录Transcript")
    averaged = group_average(assumed_mixture, common_permutation_group(transcript.n))
    return posterior_mean(averaged, transcript.i, transcript.j, k, phi)


def assumed_prior(entry, n, zeta, seed):
    """根据配置构造对手假设的先验

    entry["prior"]为"grid"（网格均匀先验，points个点）或"zeta"（samples个ζ分布对的混合）
    """
    kind = entry.get("prior", "grid")
    if kind == "grid":
        return uniform_grid_prior(n, int(entry.get("points", 3)))
    if kind == "zeta":
        zeta = ZetaParams.from_dict(entry["zeta"]) if "zeta" in entry else zeta
        rng = derive_stream(seed, "elaboration", entry.get("name", "table"))
        pairs = [JointDistribution.product(sample_zeta(zeta, n, rng), sample_zeta(zeta, n, rng))
                 for _ in range(int(entry.get("samples", 8)))]
        return JointDistribution.uniform_mixture(pairs)
    raise ValueError(f"未知的先验类型: {kind}")


def elaborate_strategies(roster, n, k, zeta, seed):
    """精心准备阶段：按名单构造并冻结全部策略

    依赖贝叶斯预言机的策略在 n > 4 时跳过并记录警告
    """
    strategies = []
    for entry in roster:
        kind = entry.get("kind")
        name = entry.get("name", kind)
        if kind in TABLE_KINDS and n > MAX_ORACLE_N:
            logger.warning(f"策略{name}需要n ≤ {MAX_ORACLE_N}，当前n={n}，已跳过")
            continue
        if kind == "inner_product":
            strategy = build_inner_product(n, k, name)
        elif kind == "dispersed_inner_product":
            strategy = build_dispersed_inner_product(n, k, name)
        elif kind == "constant":
            strategy = build_constant(n, k, entry.get("value"), name)
        elif kind == "rg_posterior":
            strategy = build_rg_posterior(n, k, assumed_prior(dict(entry, name=name), n, zeta, seed), name)
        elif kind == "table":
            strategy = build_table(n, k, assumed_prior(dict(entry, name=name), n, zeta, seed), name)
        else:
            raise ValueError(f"未知的对手策略类型: {kind}")
        strategies.append(strategy)
    names = [s.name for s in strategies]
    if len(set(names)) != len(names):
        raise ValueError(f"策略名称重复: {names}")
    logger.info(f"对手策略已冻结: {names}")
    return tuple(strategies)


@dataclass(frozen=True)
class TranscriptTable:
    """定义在完整公开记录上的策略表 values[oi, oj, order_A, order_B]

    order_A/order_B 表示 (μ1, μ2) / (μ′1, μ′2) 是否经过对换
    """

    n: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        size = 2 ** int(self.n)
        if values.shape != (size, size, 2, 2):
            raise ValueError(f"完整策略表形状必须为({size}, {size}, 2, 2)")
        object.__setattr__(self, 'values', values)


def enforce_transposition_invariance(table):
    """对四种对换组合取平均，使策略对(μ1, μ2)和(μ′1, μ′2)的顺序不变"""
    if not np.all(np.isfinite(table.values)):
        raise ValueError("完整策略表存在缺失项")
    averaged = table.values.mean(axis=(2, 3), keepdims=True)
    return TranscriptTable(table.n, np.broadcast_to(averaged, table.values.shape).copy())


def is_transposition_invariant(table, tol=1e-12):
    values = table.values
    return bool(np.all(np.abs(values - values[:, :, :1, :1]) <= tol))


def public_view(record):
    """只经由公开模式序列化重建Transcript"""
    return Transcript.from_dict(record.to_dict(public_only=True))


@dataclass(frozen=True)
class RunSummary:
    """评估所需的最小运行摘要"""

    run_index: int
    vA: float
    vB: float
    favorable: bool
    estimates: tuple

    def estimate_map(self):
        return dict(self.estimates)


def summarize_run(record, strategies, controls=()):
    transcript = public_view(record)
    estimates = [(s.name, s.estimate(transcript)) for s in strategies]
    estimates.extend((c.name, c.estimate(record)) for c in controls)
    return RunSummary(run_index=record.run_index, vA=record.vA, vB=record.vB,
                      favorable=record.favorable, estimates=tuple(estimates))


EVALUATION_COLUMNS = ["mse_all", "mse_favorable", "bit_error_all", "bit_error_favorable"]


def score_estimates(summaries, tau):
    """按策略汇总均方误差和比特错误率（全部运行与有利运行分别统计）"""
    summaries = sorted(summaries, key=lambda s: s.run_index)
    if not summaries:
        raise ValueError("没有可评估的运行")
    v_a = np.asarray([s.vA for s in summaries])
    favorable = np.asarray([s.favorable for s in summaries], dtype=bool)
    bits_a = np.asarray([binarize(v, tau) for v in v_a])
    names = [name for name, _ in summaries[0].estimates]
    rows = {}
    for name in names:
        est = np.asarray([s.estimate_map()[name] for s in summaries])
        bits_e = (est >= tau).astype(int)
        sq = (est - v_a) ** 2
        err = (bits_e != bits_a).astype(float)
        rows[name] = {
            "mse_all": float(sq.mean()),
            "mse_favorable": float(sq[favorable].mean()) if favorable.any() else np.nan,
            "bit_error_all": float(err.mean()),
            "bit_error_favorable": float(err[favorable].mean()) if favorable.any() else np.nan,
        }
    frame = pd.DataFrame.from_dict(rows, orient='index', columns=EVALUATION_COLUMNS)
    frame.index.name = "strategy"
    return frame


def score_legitimate(summaries, tau):
    """B相对A的误差统计"""
    v_a = np.asarray([s.vA for s in summaries])
    v_b = np.asarray([s.vB for s in summaries])
    favorable = np.asarray([s.favorable for s in summaries], dtype=bool)
    err = ((v_a >= tau) != (v_b >= tau)).astype(float)
    sq = (v_b - v_a) ** 2
    return {
        "mse_all": float(sq.mean()),
        "mse_favorable": float(sq[favorable].mean()) if favorable.any() else None,
        "bit_error_all": float(err.mean()),
        "bit_error_favorable": float(err[favorable].mean()) if favorable.any() else None,
    }


def evaluate_strategies(strategies, runs, tau, controls=()):
    """实例化阶段：把每次运行的公开记录交给已冻结的策略并汇总

    Returns:
        pandas.DataFrame: 行为策略，列为mse_all、mse_favorable、bit_error_all、bit_error_favorable
    """
    runs = list(runs)
    if not runs:
        raise ValueError("没有可评估的运行")
    summaries = [summarize_run(record, strategies, controls) for record in runs]
    return score_estimates(summaries, tau)
