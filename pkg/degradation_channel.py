#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
退化信道模块

实现参数退化变换 T_k (x → x/k)、第2步的伯努利实验信道、似然函数、
无偏估计器 ω_T，以及盒型分布上的精确信道矩（供贝叶斯预言机和DRG使用）。

结果编号约定：结果索引o的第l位 (o >> l) & 1 对应坐标l（小端序）
"""

import numpy as np

from utils import get_logger

logger = get_logger("degradation_channel")


def check_k(k):
    """校验退化因子 k ≥ 1"""
    k = float(k)
    if not np.isfinite(k) or k < 1.0:
        raise ValueError(f"退化因子k必须 ≥ 1，当前为{k}")
    return k


def as_bits(bits):
    """校验并转换伯努利向量"""
    arr = np.asarray(bits)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError("伯努利向量必须是非空一维数组")
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"伯努利向量的取值只能是0或1: {arr}")
    return arr.astype(np.int8)


def degrade_params(x, k):
    """退化变换 T_k：每个坐标除以k

    Args:
        x: 参数向量
        k (float): 退化因子，k ≥ 1

    Returns:
        numpy.ndarray: 坐标位于[0, 1/k]的向量
    """
    k = check_k(k)
    return np.asarray(x, dtype=float) / k


def bernoulli_draw(p, rng):
    """按概率向量p独立生成伯努利实验向量"""
    p = np.asarray(p, dtype=float).reshape(-1)
    if np.any(p < 0.0) or np.any(p > 1.0) or not np.all(np.isfinite(p)):
        raise ValueError(f"伯努利概率必须在[0,1]内: {p}")
    return (rng.random(p.size) < p).astype(np.int8)


def likelihood(i, x, k):
    """P(i | x/k) = Π_l (x_l/k)^{i_l} (1 - x_l/k)^{1-i_l}"""
    i = as_bits(i)
    p = degrade_params(x, k)
    if len(i) != len(p):
        raise ValueError(f"向量长度不一致: {len(i)} != {len(p)}")
    return float(np.prod(np.where(i == 1, p, 1.0 - p)))


def omega_T(i, j, k):
    """无偏估计器 ω_T(i, j) = k²·(i·j)/n

    取值可以超过1（最大k²），不做截断，否则会破坏无偏性
    """
    i = as_bits(i)
    j = as_bits(j)
    if len(i) != len(j):
        raise ValueError(f"向量长度不一致: {len(i)} != {len(j)}")
    k = check_k(k)
    return float(k * k * np.dot(i.astype(float), j) / len(i))


def all_outcomes(n):
    """按固定的小端序枚举{0,1}^n，返回形状(2^n, n)的数组"""
    codes = np.arange(2 ** n)
    return ((codes[:, None] >> np.arange(n)[None, :]) & 1).astype(np.int8)


def outcome_index(bits):
    """伯努利向量在all_outcomes中的行号"""
    bits = as_bits(bits)
    return int(np.dot(bits.astype(np.int64), 1 << np.arange(len(bits))))


def outcome_indices(bit_rows):
    """批量计算行号，bit_rows形状(m, n)"""
    rows = np.asarray(bit_rows, dtype=np.int64)
    return rows @ (1 << np.arange(rows.shape[1]))


def coordinate_moments(lower, upper, k):
    """盒子内逐坐标的精确信道矩

    对坐标l上的均匀分布 U[a, b] 以及比特取值 t ∈ {0,1}，记
    g_t(x) = (1-t) + (2t-1)·x/k 为该坐标的似然因子，返回
    G = E[g_t(x)]、A = E[x·g_t(x)]、B = E[x²·g_t(x)]。

    Args:
        lower, upper: 截断后的盒子上下界，形状(c, n)
        k (float): 退化因子

    Returns:
        tuple: (G, A, B)，形状均为(c, n, 2)，最后一维为比特取值
    """
    k = check_k(k)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    m = (lower + upper) / 2.0
    h2 = (upper - lower) ** 2
    e2 = m * m + h2 / 12.0
    e3 = m ** 3 + m * h2 / 4.0
    G = np.stack([1.0 - m / k, m / k], axis=-1)
    A = np.stack([m - e2 / k, e2 / k], axis=-1)
    B = np.stack([e2 - e3 / k, e3 / k], axis=-1)
    return G, A, B


def _select(factors, outcomes):
    """factors形状(c, n, 2)，按结果比特选取 → (c, 2^n, n)"""
    n = factors.shape[1]
    cols = np.arange(n)
    return factors[:, cols[None, :], outcomes]


def _leave_one_out(values):
    """沿最后一维计算除自身外的乘积（前缀积 × 后缀积）"""
    ones = np.ones(values.shape[:-1] + (1,))
    prefix = np.cumprod(np.concatenate([ones, values[..., :-1]], axis=-1), axis=-1)
    suffix = np.cumprod(np.concatenate([ones, values[..., :0:-1]], axis=-1), axis=-1)[..., ::-1]
    return prefix * suffix


def outcome_moments(lower, upper, k, second=False):
    """每个盒子分量在每个结果上的精确积分

    Returns:
        dict: "P" (c, 2^n)：∫P(i|x)dx
              "D" (c, 2^n, n)：∫x_l·P(i|x)dx
              "Q" (c, 2^n, n, n)：∫x_l·x_m·P(i|x)dx（仅当second=True）
    """
    lower = np.atleast_2d(lower)
    n = lower.shape[1]
    G, A, B = coordinate_moments(lower, upper, k)
    outcomes = all_outcomes(n)
    g = _select(G, outcomes)
    a = _select(A, outcomes)
    loo = _leave_one_out(g)
    result = {"P": np.prod(g, axis=-1), "D": a * loo}
    if second:
        b = _select(B, outcomes)
        # 非对角：A_l·A_m·Π_{其余}G；对角：B_l·Π_{其余}G
        if np.any(g == 0):
            Q = _second_moments_direct(g, a)
        else:
            Q = result["D"][..., :, None] * (a / g)[..., None, :]
        diag = b * loo
        idx = np.arange(n)
        Q[..., idx, idx] = diag
        result["Q"] = Q
    return result


def _second_moments_direct(g, a):
    """逐对坐标直接计算 A_l·A_m·Π_{其余}G（存在零因子时使用）"""
    n = g.shape[-1]
    Q = np.zeros(g.shape + (n,))
    for l in range(n):
        for m in range(n):
            if l == m:
                continue
            mask = np.ones(n, dtype=bool)
            mask[[l, m]] = False
            rest = np.prod(g[..., mask], axis=-1)
            Q[..., l, m] = a[..., l] * a[..., m] * rest
    return Q


def outcome_likelihoods(x, k):
    """单个参数向量在全部2^n个结果上的似然"""
    x = np.asarray(x, dtype=float)[None, :]
    return outcome_moments(x, x, k)["P"][0]


def expected_omega_T(x, y, k):
    """穷举全部结果对计算 E[ω_T(i, j) | x, y]"""
    n = len(x)
    px = outcome_likelihoods(x, k)
    py = outcome_likelihoods(y, k)
    outcomes = all_outcomes(n).astype(float)
    k = check_k(k)
    omega = k * k * (outcomes @ outcomes.T) / n
    return float(px @ omega @ py)
