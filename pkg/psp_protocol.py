#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
完美保密协议（PSP）模块

按步骤实现双方状态机：
1. 生成：各自从ζ(α)抽取分布Φ（Φ′）并采样秘密参数向量x（y）
2. 发布：退化后做伯努利实验，公开i（j）
3. 分散：抽取Ψ（Ψ′），计算诱饵置换σ_d[i]，以随机顺序公开(σ_d[i], σ_Φ)
4. 同步：从对方公开的置换对中随机选择一个
5. 估计：计算V_A、V_B，再按阈值二值化

RunRecord同时保存双方秘密和公开记录；公开模式的序列化只输出Transcript，
对手策略只能看到这部分数据。
"""

import itertools
from dataclasses import dataclass, field

import numpy as np

from core_model import Permutation, apply_permutation, canonical_form, tidying_permutation
from deep_random import ZetaParams, sample_zeta
from degradation_channel import as_bits, bernoulli_draw, check_k, degrade_params
from utils import child_stream, derive_stream, get_logger

logger = get_logger("psp_protocol")

# σ_d[i] 精确枚举的最大维度
EXACT_SIGMA_D_N = 6
SIGMA_D_TIE_TOL = 1e-12
BAND_CHUNK = 8192
# 一方实例因分散失败而整体重来的上限
MAX_PARTY_REDRAWS = 1000


class DispersionError(RuntimeError):
    """分散质量条件无法满足（Ψ重新生成次数耗尽或带与[0,1]^n不相交）"""


@dataclass(frozen=True)
class ProtocolParams:
    """协议参数 𝒫(α, n, k)"""

    n: int
    k: float
    zeta: ZetaParams = field(default_factory=ZetaParams)
    tau: float = None
    seed: int = 0
    dispersion_retries: int = 100
    band_samples: int = 100_000

    def __post_init__(self):
        if int(self.n) < 2:
            raise ValueError(f"协议维度n必须至少为2，当前为{self.n}")
        check_k(self.k)
        if self.dispersion_retries < 0 or self.band_samples < 1:
            raise ValueError("dispersion_retries必须非负，band_samples必须为正")

    def with_tau(self, tau):
        return ProtocolParams(n=self.n, k=self.k, zeta=self.zeta, tau=tau, seed=self.seed,
                              dispersion_retries=self.dispersion_retries,
                              band_samples=self.band_samples)

    def to_dict(self):
        return {"n": self.n, "k": self.k, "zeta": self.zeta.to_dict(), "tau": self.tau,
                "dispersion_retries": self.dispersion_retries, "band_samples": self.band_samples}


def _perm_pair_to_json(pair):
    return [p.to_one_based() for p in pair]


def _perm_pair_from_json(data):
    if len(data) != 2:
        raise ValueError("置换对必须恰好包含两个置换")
    return tuple(Permutation.from_one_based(p) for p in data)


@dataclass(frozen=True)
class Transcript:
    """一次协议实例的公开记录 (i, j, (μ1, μ2), (μ′1, μ′2))"""

    i: tuple
    j: tuple
    muA: tuple
    muB: tuple

    def __post_init__(self):
        object.__setattr__(self, 'i', tuple(int(v) for v in as_bits(self.i)))
        object.__setattr__(self, 'j', tuple(int(v) for v in as_bits(self.j)))
        n = len(self.i)
        if len(self.j) != n:
            raise ValueError("公开向量i与j长度不一致")
        for pair in (self.muA, self.muB):
            if len(pair) != 2 or any(p.n != n for p in pair):
                raise ValueError("公开置换对必须包含两个与比特向量同长度的置换")

    @property
    def n(self):
        return len(self.i)

    def to_dict(self):
        return {"i": list(self.i), "j": list(self.j),
                "muA": _perm_pair_to_json(self.muA), "muB": _perm_pair_to_json(self.muB)}

    @classmethod
    def from_dict(cls, data):
        return cls(i=tuple(data["i"]), j=tuple(data["j"]),
                   muA=_perm_pair_from_json(data["muA"]), muB=_perm_pair_from_json(data["muB"]))


@dataclass
class PartySecrets:
    """一方在整个协议过程中的全部私有状态"""

    x: np.ndarray
    phi: object
    sigma_phi: Permutation
    psi: object = None
    sigma_d: Permutation = None
    b: int = None
    sigma_chosen: Permutation = None
    dispersion_retries: int = 0
    party_redraws: int = 0
    band_mass: float = None
    band_stderr: float = None

    def to_dict(self):
        return {
            "x": [float(v) for v in self.x],
            "phi": self.phi.to_dict(),
            "sigma_phi": self.sigma_phi.to_one_based(),
            "psi": self.psi.to_dict() if self.psi is not None else None,
            "sigma_d": self.sigma_d.to_one_based() if self.sigma_d is not None else None,
            "b": self.b,
            "sigma_chosen": self.sigma_chosen.to_one_based() if self.sigma_chosen is not None else None,
            "dispersion_retries": self.dispersion_retries,
            "party_redraws": self.party_redraws,
            "band_mass": self.band_mass,
            "band_stderr": self.band_stderr,
        }


@dataclass
class RunRecord:
    """一次协议实例的完整记录"""

    run_index: int
    secrets_a: PartySecrets
    secrets_b: PartySecrets
    transcript: Transcript
    vA: float
    vB: float
    favorable: bool
    bitA: int = None
    bitB: int = None

    def to_dict(self, public_only=False):
        if public_only:
            return self.transcript.to_dict()
        return {
            "run_index": self.run_index,
            "a": self.secrets_a.to_dict(),
            "b": self.secrets_b.to_dict(),
            "transcript": self.transcript.to_dict(),
            "vA": self.vA,
            "vB": self.vB,
            "favorable": self.favorable,
            "bitA": self.bitA,
            "bitB": self.bitB,
        }


def step1_generate(params, rng):
    """第1步：抽取Φ ∈ ζ(α)并从Φ采样x"""
    phi = sample_zeta(params.zeta, params.n, rng)
    return phi, phi.sample(rng)


def step2_publish(x, params, rng):
    """第2步：按x/k做伯努利实验，返回公开向量i"""
    return bernoulli_draw(degrade_params(x, params.k), rng)


def sigma_d_scores(i, psi, k, perms):
    """每个候选σ的得分 ∫P(i|x)·(Ψ∘σ_Ψ∘σ⁻¹)(x)dx

    Ψ∘σ_Ψ 为规范形式C，C∘σ⁻¹的样本是apply(σ, X)；似然是多线性的，
    因此盒子上的积分等于在盒子中点处的取值。
    """
    i = as_bits(i)
    canonical = canonical_form(psi)
    mids = canonical.midpoints()
    X = mids[:, perms] / check_k(k)
    lik = np.where(i == 1, X, 1.0 - X).prod(axis=-1)
    return canonical.weights @ lik


def greedy_sigma_d(i):
    """贪心对齐：i中为1的位置依次对应规范形式中均值最大的坐标"""
    i = as_bits(i)
    ones = np.flatnonzero(i == 1)
    zeros = np.flatnonzero(i == 0)
    mapping = np.empty(len(i), dtype=np.int64)
    mapping[ones] = np.arange(len(ones))
    mapping[zeros] = np.arange(len(ones), len(i))
    return Permutation(tuple(mapping.tolist()))


def compute_sigma_d(i, psi, k):
    """最可能产生i的整理置换之逆 σ_d[i]

    n ≤ 6 时在S_n上精确枚举（平局取字典序最小的映射），否则使用贪心对齐
    """
    i = as_bits(i)
    n = len(i)
    if n != psi.n:
        raise ValueError(f"i的长度{n}与Ψ的维度{psi.n}不一致")
    if n > EXACT_SIGMA_D_N:
        return greedy_sigma_d(i)
    perms = np.asarray(list(itertools.permutations(range(n))), dtype=np.int64)
    scores = sigma_d_scores(i, psi, k, perms)
    best = scores.max()
    chosen = int(np.flatnonzero(scores >= best * (1.0 - SIGMA_D_TIE_TOL))[0])
    return Permutation(tuple(perms[chosen].tolist()))


@dataclass(frozen=True)
class BandMass:
    mass: float
    stderr: float


def dispersion_band_mass(psi, i, k, samples, rng):
    """Ψ在带 {x : Σx_l ∈ [k|i| - √n, k|i| + √n]} 上的质量

    完全落在带内（外）的盒子直接计1（0），与带边界相交的盒子做蒙特卡洛积分
    """
    i = as_bits(i)
    n = psi.n
    target = check_k(k) * float(i.sum())
    band_lo, band_hi = target - np.sqrt(n), target + np.sqrt(n)
    lower, upper = psi.bounds()
    mass = 0.0
    variance = 0.0
    for w, lo, hi in zip(psi.weights, lower, upper):
        if lo.sum() >= band_lo and hi.sum() <= band_hi:
            mass += w
            continue
        if hi.sum() < band_lo or lo.sum() > band_hi:
            continue
        hits = 0
        remaining = samples
        while remaining > 0:
            size = min(remaining, BAND_CHUNK)
            totals = (lo + rng.random((size, n)) * (hi - lo)).sum(axis=1)
            hits += int(np.count_nonzero((totals >= band_lo) & (totals <= band_hi)))
            remaining -= size
        p = hits / samples
        mass += w * p
        variance += w * w * p * (1.0 - p) / samples
    return BandMass(float(mass), float(np.sqrt(variance)))


def dispersion_floor(n):
    return 1.0 / (2.0 * np.sqrt(n))


def check_dispersion_mass(psi, i, params, rng=None):
    """分散质量条件：带内质量 ≥ 1/(2√n)"""
    rng = rng if rng is not None else derive_stream(params.seed, "dispersion-band")
    band = dispersion_band_mass(psi, i, params.k, params.band_samples, rng)
    return band.mass >= dispersion_floor(psi.n)


def draw_dispersion_distribution(i, params, rng):
    """抽取满足分散质量条件的Ψ

    从ζ(α)抽取后把每个盒子沿对角线平移，使各盒子的坐标和都对准k|i|，
    因而 Σ E_Ψ[x] = k|i|（截断到[0,1]时除外）；不满足条件时重新抽取

    Returns:
        tuple: (Ψ, 重新生成次数, BandMass)

    Raises:
        DispersionError: 超过dispersion_retries次仍不满足
    """
    i = as_bits(i)
    floor = dispersion_floor(params.n)
    if params.k * float(i.sum()) - np.sqrt(params.n) > params.n:
        # 带整体位于[0,1]^n之外，任何Ψ都无法满足
        raise DispersionError(f"分散带与[0,1]^n不相交 (|i|={int(i.sum())})")
    for attempt in range(params.dispersion_retries + 1):
        psi = sample_zeta(params.zeta, params.n, rng)
        deltas = (params.k * float(i.sum()) - psi.midpoints().sum(axis=1)) / params.n
        psi = psi.shifted(deltas[:, None])
        band = dispersion_band_mass(psi, i, params.k, params.band_samples, rng)
        if band.mass >= floor:
            return psi, attempt, band
    raise DispersionError(f"Ψ重新生成{params.dispersion_retries}次仍不满足分散质量条件 (|i|={int(i.sum())})")


def step3_disperse(sigma_d, sigma_phi, rng):
    """第3步：以随机顺序公开 t^b(σ_d[i], σ_Φ)"""
    b = int(rng.integers(2))
    pair = (sigma_d, sigma_phi) if b == 0 else (sigma_phi, sigma_d)
    return pair, b


def step4_synchronize(pair, rng):
    """第4步：从对方公开的置换对中均匀选取一个"""
    return pair[int(rng.integers(2))]


def step5_value(own_vec, sigma_own, sigma_chosen, other_bits):
    """第5步：V = σ_own⁻¹(own)·σ_chosen⁻¹(other)/n"""
    own_vec = np.asarray(own_vec, dtype=float)
    other_bits = np.asarray(other_bits, dtype=float)
    if len(own_vec) != len(other_bits):
        raise ValueError(f"向量长度不一致: {len(own_vec)} != {len(other_bits)}")
    left = apply_permutation(sigma_own.inverse(), own_vec)
    right = apply_permutation(sigma_chosen.inverse(), other_bits)
    return float(np.dot(left, right) / len(own_vec))


def binarize(v, tau):
    """阈值二值化：v ≥ tau 输出1"""
    return 1 if v >= tau else 0


def _party_steps(params, rng):
    phi, x = step1_generate(params, rng)
    return PartySecrets(x=x, phi=phi, sigma_phi=tidying_permutation(phi))


def _disperse(secrets, bits, params, rng):
    psi, retries, band = draw_dispersion_distribution(bits, params, rng)
    secrets.psi = psi
    secrets.sigma_d = compute_sigma_d(bits, psi, params.k)
    secrets.dispersion_retries = retries
    secrets.band_mass = band.mass
    secrets.band_stderr = band.stderr
    pair, secrets.b = step3_disperse(secrets.sigma_d, secrets.sigma_phi, rng)
    return pair


def run_party(params, rng):
    """一方的第1至3步

    Ψ的重新生成次数耗尽时，丢弃本方的(Φ, x, i)并从第1步重来，重来次数记入party_redraws

    Returns:
        tuple: (PartySecrets, 公开向量i, 公开置换对)
    """
    for redraw in range(MAX_PARTY_REDRAWS + 1):
        secrets = _party_steps(params, rng)
        bits = step2_publish(secrets.x, params, rng)
        try:
            pair = _disperse(secrets, bits, params, rng)
        except DispersionError as e:
            logger.debug(f"第{redraw + 1}次重新抽取本方实例: {e}")
            continue
        secrets.party_redraws = redraw
        return secrets, bits, pair
    raise DispersionError(f"本方实例重新抽取{MAX_PARTY_REDRAWS}次仍不满足分散质量条件")


def run_instance(params, rng, run_index=0):
    """执行双方的第1至5步，双方使用相互独立的随机数流"""
    rng_a = child_stream(rng)
    rng_b = child_stream(rng)
    secrets_a, i, mu_a = run_party(params, rng_a)
    secrets_b, j, mu_b = run_party(params, rng_b)
    secrets_a.sigma_chosen = step4_synchronize(mu_b, rng_a)
    secrets_b.sigma_chosen = step4_synchronize(mu_a, rng_b)
    v_a = step5_value(secrets_a.x, secrets_a.sigma_phi, secrets_a.sigma_chosen, j)
    v_b = step5_value(secrets_b.x, secrets_b.sigma_phi, secrets_b.sigma_chosen, i)
    favorable = (secrets_a.sigma_chosen == secrets_b.sigma_phi
                 and secrets_b.sigma_chosen == secrets_a.sigma_phi)
    record = RunRecord(run_index=run_index, secrets_a=secrets_a, secrets_b=secrets_b,
                       transcript=Transcript(i=i, j=j, muA=mu_a, muB=mu_b),
                       vA=v_a, vB=v_b, favorable=bool(favorable))
    if params.tau is not None:
        record.bitA = binarize(v_a, params.tau)
        record.bitB = binarize(v_b, params.tau)
    return record


def run_stream(params, master_seed, run_index, role="run"):
    """按(master_seed, run_index, role)派生的随机数流执行一次实例"""
    return run_instance(params, derive_stream(master_seed, role, run_index), run_index=run_index)


def calibrate_threshold(params, runs=10 ** 4, seed=0):
    """用独立的校准流估计阈值tau：有利情形V_A的经验中位数"""
    values = []
    fallback = []
    for r in range(runs):
        record = run_stream(params, seed, r, role="calibration")
        fallback.append(record.vA)
        if record.favorable:
            values.append(record.vA)
    if not values:
        logger.warning(f"校准的{runs}次运行中没有有利情形，改用全部运行的中位数")
        values = fallback
    tau = float(np.median(values))
    logger.info(f"阈值校准完成: tau={tau:.6f} (有利样本{len(values)}个)")
    return tau
