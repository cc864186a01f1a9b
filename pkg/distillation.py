#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
后处理模块（第5′至6步）

- BSC误码率估计
- 重复码优势蒸馏：A为每个长度L的码字抽取秘密比特s并公开 m = a ⊕ s，
  B仅在 b ⊕ m 全部相同时接受
- 分块奇偶校验 + 二分查找的信息协调
- Toeplitz矩阵线性哈希的隐私放大
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from utils import derive_stream, get_logger

logger = get_logger("distillation")


def as_bit_array(bits):
    arr = np.asarray(bits)
    if arr.ndim != 1:
        raise ValueError("比特串必须是一维数组")
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError("比特串的取值只能是0或1")
    return arr.astype(np.uint8)


@dataclass(frozen=True)
class BscEstimate:
    epsilon: float
    sample_count: int

    def to_dict(self):
        return {"epsilon": self.epsilon, "sample_count": self.sample_count}


@dataclass(frozen=True)
class AdParams:
    """重复码优势蒸馏参数，L为码字长度"""

    L: int = 5

    def __post_init__(self):
        if int(self.L) < 1:
            raise ValueError(f"码字长度L必须至少为1，当前为{self.L}")


def estimate_bsc(a, b):
    """以不一致比例估计BSC误码率"""
    a = as_bit_array(a)
    b = as_bit_array(b)
    if len(a) != len(b):
        raise ValueError(f"比特串长度不一致: {len(a)} != {len(b)}")
    if len(a) == 0:
        raise ValueError("比特串不能为空")
    return BscEstimate(epsilon=float(np.mean(a != b)), sample_count=int(len(a)))


def ad_encode(s, a):
    """m_l = a_l ⊕ s"""
    if s not in (0, 1):
        raise ValueError(f"秘密比特只能是0或1: {s}")
    return as_bit_array(a) ^ np.uint8(s)


def ad_decode(m, b):
    """c_l = b_l ⊕ m_l，全部相同时接受并输出该值

    Returns:
        tuple: (是否接受, 解码比特或None)
    """
    m = as_bit_array(m)
    b = as_bit_array(b)
    if len(m) != len(b):
        raise ValueError(f"码字长度不一致: {len(m)} != {len(b)}")
    c = b ^ m
    if np.all(c == c[0]):
        return True, int(c[0])
    return False, None


def ad_rates(eps_ab, eps_ae, L):
    """重复码优势蒸馏的闭式速率

    accept = (1-ε)^L + ε^L；err_b = ε^L / accept；
    err_e = ε_e^L / (ε_e^L + (1-ε_e)^L)
    """
    for eps in (eps_ab, eps_ae):
        if not 0.0 <= eps <= 1.0:
            raise ValueError(f"误码率必须在[0,1]内: {eps}")
    L = AdParams(L).L
    accept = (1.0 - eps_ab) ** L + eps_ab ** L
    err_e_den = eps_ae ** L + (1.0 - eps_ae) ** L
    return {
        "accept": accept,
        "err_b": eps_ab ** L / accept,
        "err_e": eps_ae ** L / err_e_den,
    }


def simulate_ad_rates(eps_ab, eps_ae, L, trials, rng):
    """在合成的独立BSC上模拟优势蒸馏，与ad_rates的定义一一对应

    err_e按E自身码字一致（同样的后选择）时的错误率统计；err_e_majority为E在B接受的码字上多数判决的错误率
    """
    s = rng.integers(0, 2, size=trials, dtype=np.uint8)
    a = rng.integers(0, 2, size=(trials, L), dtype=np.uint8)
    b = a ^ (rng.random((trials, L)) < eps_ab).astype(np.uint8)
    e = a ^ (rng.random((trials, L)) < eps_ae).astype(np.uint8)
    m = a ^ s[:, None]
    c_b = b ^ m
    c_e = e ^ m
    accepted = np.all(c_b == c_b[:, :1], axis=1)
    e_consistent = np.all(c_e == c_e[:, :1], axis=1)
    majority = (2 * c_e.sum(axis=1) > L).astype(np.uint8)
    return {
        "accept": float(accepted.mean()),
        "err_b": float(np.mean(c_b[accepted, 0] != s[accepted])) if accepted.any() else np.nan,
        "err_e": float(np.mean(c_e[e_consistent, 0] != s[e_consistent])) if e_consistent.any() else np.nan,
        "err_e_majority": float(np.mean(majority[accepted] != s[accepted])) if accepted.any() else np.nan,
        "accepted": int(accepted.sum()),
        "e_consistent": int(e_consistent.sum()),
    }


def _locate_error(a, b, indices):
    """在奇偶不一致的块内二分查找一个错误位置，返回(位置, 泄露的奇偶位数)"""
    leaked = 0
    while len(indices) > 1:
        half = indices[:len(indices) // 2]
        leaked += 1
        if (int(a[half].sum()) - int(b[half].sum())) % 2 != 0:
            indices = half
        else:
            indices = indices[len(indices) // 2:]
    return int(indices[0]), leaked


@dataclass
class ReconcileResult:
    """信息协调结果

    Attributes:
        corrected: 修正后的b
        leaked: 公开的奇偶位总数
        corrections: 翻转的位数
        residual: 协调后仍不一致的位数
        mismatches: 每一轮结束时的不一致位数
    """

    corrected: np.ndarray
    leaked: int
    corrections: int
    residual: int
    mismatches: list


def reconcile(a, b, block, passes, rng):
    """分块奇偶校验信息协调

    每一轮先做双方共享的随机重排，再按块交换奇偶位；不一致的块二分查找并翻转一个错误。
    二分查找总是落在真实的错误位置上，因此不一致位数逐轮单调不增。

    Returns:
        ReconcileResult: 修正后的b、泄露位数与剩余不一致
    """
    a = as_bit_array(a)
    b = as_bit_array(b).copy()
    if len(a) != len(b):
        raise ValueError(f"比特串长度不一致: {len(a)} != {len(b)}")
    if block < 2 or passes < 1:
        raise ValueError(f"block必须 ≥ 2且passes必须 ≥ 1，当前为{block}, {passes}")
    leaked = 0
    corrections = 0
    mismatches = []
    for _ in range(passes):
        order = rng.permutation(len(a))
        for start in range(0, len(a), block):
            indices = order[start:start + block]
            leaked += 1
            if (int(a[indices].sum()) - int(b[indices].sum())) % 2 == 0:
                continue
            position, steps = _locate_error(a, b, indices)
            leaked += steps
            b[position] ^= 1
            corrections += 1
        mismatches.append(int(np.count_nonzero(a != b)))
    residual = mismatches[-1]
    logger.debug(f"信息协调完成: 修正{corrections}位, 泄露{leaked}位, 剩余不一致{residual}位")
    return ReconcileResult(corrected=b, leaked=leaked, corrections=corrections,
                           residual=residual, mismatches=mismatches)


def toeplitz_seed(seed, in_len, out_len):
    """由种子派生 out_len + in_len - 1 位的Toeplitz对角线比特"""
    rng = derive_stream(seed, "toeplitz", in_len, out_len)
    return rng.integers(0, 2, size=out_len + in_len - 1, dtype=np.uint8)


def privacy_amplify(bits, seed, out_len):
    """Toeplitz矩阵线性哈希：output = T·bits (GF(2))

    T[r, c] = t[r - c + N - 1]，第r行即 t[r : r+N] 的逆序
    """
    bits = as_bit_array(bits)
    n = len(bits)
    if out_len < 0 or out_len > n:
        raise ValueError(f"输出长度{out_len}必须在[0, {n}]内")
    if out_len == 0:
        return np.zeros(0, dtype=np.uint8)
    diagonals = toeplitz_seed(seed, n, out_len)
    matrix = sliding_window_view(diagonals, n)[:out_len, ::-1]
    output = (matrix.astype(np.int64) @ bits.astype(np.int64)) % 2
    logger.debug(f"隐私放大完成: {n} -> {out_len} 位")
    return output.astype(np.uint8)


def pack_bits(bits):
    """比特串 → {"bits": 位数, "hex": 十六进制串}"""
    bits = as_bit_array(bits)
    return {"bits": int(len(bits)), "hex": np.packbits(bits).tobytes().hex()}


def unpack_bits(data):
    raw = np.frombuffer(bytes.fromhex(data["hex"]), dtype=np.uint8)
    count = int(data["bits"])
    bits = np.unpackbits(raw)
    if len(bits) < count:
        raise ValueError(f"十六进制串只包含{len(bits)}位，少于声明的{count}位")
    return bits[:count].copy()


FILTER_MODES = ("oracle", "public", "none")


@dataclass(frozen=True)
class FilterResult:
    """公开检错过滤的结果

    Attributes:
        keep: 每次运行是否保留（布尔掩码）
        leaked: 公开的奇偶位总数
        blocks: 参与检查的块数
        accepted_blocks: 全部检查都一致的块数
    """

    keep: np.ndarray
    leaked: int
    blocks: int
    accepted_blocks: int


def public_error_filter(a, b, block, checks, rng):
    """按块公开检错，丢弃检出不一致的块

    连续block次运行为一块；A对每块公开checks个随机子集的奇偶位，B逐一比对，
    全部一致才接受该块。接受的块按泄露位数丢弃前checks位，块外的尾部运行丢弃。
    块内只要存在不一致的位，每个随机子集检查恰有1/2的概率检出。
    """
    a = as_bit_array(a)
    b = as_bit_array(b)
    if len(a) != len(b):
        raise ValueError(f"比特串长度不一致: {len(a)} != {len(b)}")
    if block < 2 or not 1 <= checks < block:
        raise ValueError(f"需要 block ≥ 2 且 1 ≤ checks < block，当前为{block}, {checks}")
    blocks = len(a) // block
    keep = np.zeros(len(a), dtype=bool)
    if blocks == 0:
        return FilterResult(keep=keep, leaked=0, blocks=0, accepted_blocks=0)
    subsets = rng.random((blocks, checks, block)) < 0.5
    a_blocks = a[:blocks * block].reshape(blocks, 1, block)
    b_blocks = b[:blocks * block].reshape(blocks, 1, block)
    parity_a = (subsets & (a_blocks == 1)).sum(axis=-1) % 2
    parity_b = (subsets & (b_blocks == 1)).sum(axis=-1) % 2
    passed = np.all(parity_a == parity_b, axis=1)
    survivors = passed[:, None] & (np.arange(block) >= checks)[None, :]
    keep[:blocks * block] = survivors.reshape(-1)
    logger.debug(f"公开检错: {blocks}块中接受{int(passed.sum())}块, 泄露{blocks * checks}位")
    return FilterResult(keep=keep, leaked=blocks * checks, blocks=blocks,
                        accepted_blocks=int(passed.sum()))


def filter_rates(keep, favorable):
    """过滤器的接受率与误接受率（保留的运行中不利情形的比例）"""
    keep = np.asarray(keep, dtype=bool)
    favorable = np.asarray(favorable, dtype=bool)
    if len(keep) != len(favorable):
        raise ValueError(f"掩码长度不一致: {len(keep)} != {len(favorable)}")
    kept = int(keep.sum())
    return {
        "kept": kept,
        "accept_rate": kept / len(keep) if len(keep) else float('nan'),
        "false_accept_rate": float(np.mean(~favorable[keep])) if kept else float('nan'),
    }


@dataclass(frozen=True)
class DistillParams:
    """后处理链参数

    filter决定哪些运行进入优势蒸馏：oracle按秘密的有利标志挑选（仅仿真可用），
    public使用公开检错过滤，none使用全部运行。
    """

    ad: AdParams = field(default_factory=AdParams)
    block: int = 16
    passes: int = 2
    out_len: int = 128
    filter: str = "oracle"
    filter_block: int = 4
    filter_checks: int = 1

    def __post_init__(self):
        if self.block < 2 or self.passes < 1 or self.out_len < 1:
            raise ValueError("distillation参数无效：block ≥ 2，passes ≥ 1，out_len ≥ 1")
        if self.filter not in FILTER_MODES:
            raise ValueError(f"filter必须是{FILTER_MODES}之一，当前为{self.filter}")
        if self.filter_block < 2 or not 1 <= self.filter_checks < self.filter_block:
            raise ValueError("filter参数无效：filter_block ≥ 2，1 ≤ filter_checks < filter_block")

    def to_dict(self):
        return {"L": self.ad.L, "block": self.block, "passes": self.passes, "out_len": self.out_len,
                "filter": self.filter, "filter_block": self.filter_block, "filter_checks": self.filter_checks}


@dataclass
class DistillationReport:
    raw_bits: int
    eps_ab: BscEstimate
    eps_ae: dict
    accept_rate: float
    err_b: float
    err_b_closed_form: float
    err_e: dict
    err_e_closed_form: dict
    leaked_bits: int
    corrections: int
    residual_bits: int
    residual_error: float
    key_len: int
    key_match: bool
    key: dict

    def to_dict(self):
        return {
            "raw_bits": self.raw_bits,
            "eps_ab": self.eps_ab.to_dict(),
            "eps_ae": {name: est.to_dict() for name, est in self.eps_ae.items()},
            "accept_rate": self.accept_rate,
            "err_b": self.err_b,
            "err_b_closed_form": self.err_b_closed_form,
            "err_e": dict(self.err_e),
            "err_e_closed_form": dict(self.err_e_closed_form),
            "leaked_bits": self.leaked_bits,
            "corrections": self.corrections,
            "residual_bits": self.residual_bits,
            "residual_error": self.residual_error,
            "key_len": self.key_len,
            "key_match": self.key_match,
            "key": self.key,
        }


def run_distillation(bits_a, bits_b, eve_bits, params, seed):
    """优势蒸馏 → 信息协调 → 隐私放大

    Args:
        bits_a, bits_b: 双方的原始比特
        eve_bits (dict): {策略名: 对手的比特串}
        params (DistillParams): 参数
        seed (int): 主种子

    Returns:
        DistillationReport: 蒸馏报告
    """
    a = as_bit_array(bits_a)
    b = as_bit_array(bits_b)
    eves = {name: as_bit_array(bits) for name, bits in eve_bits.items()}
    if len(a) != len(b) or any(len(e) != len(a) for e in eves.values()):
        raise ValueError("各方比特串长度不一致")
    L = params.ad.L
    words = len(a) // L
    if words == 0:
        raise ValueError(f"原始比特数{len(a)}少于码字长度{L}")
    eps_ab = estimate_bsc(a, b)
    eps_ae = {name: estimate_bsc(a, e) for name, e in eves.items()}

    rng = derive_stream(seed, "distillation", "ad")
    s = rng.integers(0, 2, size=words, dtype=np.uint8)
    a_words = a[:words * L].reshape(words, L)
    public = a_words ^ s[:, None]
    c_b = b[:words * L].reshape(words, L) ^ public
    accepted = np.all(c_b == c_b[:, :1], axis=1)
    key_a = s[accepted]
    key_b = c_b[accepted, 0]
    accept_rate = float(accepted.mean())
    err_b = float(np.mean(key_a != key_b)) if accepted.any() else float('nan')

    err_e = {}
    for name, e in eves.items():
        c_e = e[:words * L].reshape(words, L) ^ public
        majority = (2 * c_e.sum(axis=1) > L).astype(np.uint8)
        err_e[name] = float(np.mean(majority[accepted] != key_a)) if accepted.any() else float('nan')
    closed = {name: ad_rates(eps_ab.epsilon, est.epsilon, L) for name, est in eps_ae.items()}
    err_b_closed = ad_rates(eps_ab.epsilon, eps_ab.epsilon, L)["err_b"]

    leaked = 0
    corrections = 0
    residual_bits = 0
    residual = 0.0
    key_len = 0
    key_match = False
    key = pack_bits(np.zeros(0, dtype=np.uint8))
    if len(key_a) >= 2:
        result = reconcile(key_a, key_b, params.block, params.passes,
                           derive_stream(seed, "distillation", "reconcile"))
        leaked = result.leaked
        corrections = result.corrections
        residual_bits = result.residual
        residual = residual_bits / len(key_a)
        key_len = max(min(params.out_len, len(key_a) - leaked), 0)
        if key_len > 0:
            final_a = privacy_amplify(key_a, seed, key_len)
            final_b = privacy_amplify(result.corrected, seed, key_len)
            key_match = bool(np.array_equal(final_a, final_b))
            key = pack_bits(final_a)
    else:
        logger.warning(f"优势蒸馏后只剩{len(key_a)}位，无法继续信息协调")

    report = DistillationReport(
        raw_bits=int(len(a)), eps_ab=eps_ab, eps_ae=eps_ae, accept_rate=accept_rate,
        err_b=err_b, err_b_closed_form=err_b_closed, err_e=err_e,
        err_e_closed_form={name: r["err_e"] for name, r in closed.items()},
        leaked_bits=int(leaked), corrections=int(corrections), residual_bits=int(residual_bits),
        residual_error=float(residual), key_len=int(key_len),
        key_match=key_match, key=key)
    logger.info(f"蒸馏完成: 原始{len(a)}位, 接受率{accept_rate:.4f}, 泄露{leaked}位, 密钥{key_len}位")
    return report
