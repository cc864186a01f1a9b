#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
实验编排模块

两阶段安全博弈：
1. 精心准备：对手按名单构造并冻结策略，此时还没有任何运行数据
2. 实例化：生成N次协议运行，每次只把公开记录交给已冻结的策略

运行按连续区块分配给线程池中的工作线程，每个工作线程在本地完成评估并只保留紧凑摘要，
最后按运行序号合并，因此报告与线程调度无关。
"""

import concurrent.futures
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from prettytable import PrettyTable

from adversary import NoiseFloorControl, elaborate_strategies, score_estimates, score_legitimate, summarize_run
from deep_random import DrgParams, ZetaParams, ZetaSamplingError
from distillation import AdParams, DistillParams, estimate_bsc, filter_rates, public_error_filter, run_distillation
from psp_protocol import ProtocolParams, calibrate_threshold, run_stream
from utils import derive_stream, dumps_canonical, get_logger

logger = get_logger("experiment")

CODE_VERSION = "0.1.0"

DEFAULT_ROSTER = (
    {"kind": "inner_product", "name": "omega_T"},
    {"kind": "dispersed_inner_product", "name": "dispersed_omega_T"},
    {"kind": "constant", "name": "prior_mean"},
    {"kind": "rg_posterior", "name": "rg_posterior_grid", "prior": "grid", "points": 3},
    {"kind": "table", "name": "best_response_zeta", "prior": "zeta", "samples": 8},
)

SCOPE_NOTE = ("对手误差只针对内置的有限策略集合（以及n ≤ 4时的精确最优响应）测量，"
              "并不覆盖全部受限策略")


class ConfigError(ValueError):
    """实验配置无效"""


def _section(data, name):
    value = data.get(name) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"配置节 {name} 必须是映射")
    return value


@dataclass(frozen=True)
class ExperimentConfig:
    """实验配置（YAML或JSON文档）"""

    protocol: ProtocolParams
    roster: tuple
    distill: DistillParams
    runs: int
    master_seed: int
    workers: int = 4
    calibration_runs: int = 10 ** 4
    target_error: float = 1e-3
    target_leak: float = 1e-3
    output_json: str = None
    output_csv: str = None
    drg: DrgParams = field(default_factory=DrgParams)
    drg_steps: int = 10
    log_level: str = "INFO"
    log_file: str = None

    @classmethod
    def from_dict(cls, data):
        """从配置字典构造并校验；任何无效值都抛出ConfigError"""
        if not isinstance(data, dict):
            raise ConfigError("配置文档必须是映射")
        try:
            protocol = _section(data, "protocol")
            zeta = ZetaParams.from_dict(_section(data, "zeta"))
            experiment = _section(data, "experiment")
            distill = _section(data, "distillation")
            output = _section(data, "output")
            app = _section(data, "app")
            drg = _section(data, "drg")
            master_seed = int(experiment.get("master_seed", 0))
            if not 0 <= master_seed < 2 ** 64:
                raise ConfigError(f"master_seed必须是64位无符号整数，当前为{master_seed}")
            tau = protocol.get("tau")
            params = ProtocolParams(
                n=int(protocol.get("n", 128)),
                k=float(protocol.get("k", 3.0)),
                zeta=zeta,
                tau=None if tau is None else float(tau),
                seed=master_seed,
                dispersion_retries=int(protocol.get("dispersion_retries", 100)),
                band_samples=int(protocol.get("band_samples", 100_000)),
            )
            roster = data.get("adversaries", list(DEFAULT_ROSTER))
            if not isinstance(roster, list) or not all(isinstance(s, dict) and "kind" in s for s in roster):
                raise ConfigError("adversaries必须是包含kind字段的映射列表")
            distill_params = DistillParams(
                ad=AdParams(int(distill.get("L", 5))),
                block=int(distill.get("block", 16)),
                passes=int(distill.get("passes", 2)),
                out_len=int(distill.get("out_len", 128)),
                filter=str(distill.get("filter", "oracle" if distill.get("favorable_only", True) else "none")),
                filter_block=int(distill.get("filter_block", 4)),
                filter_checks=int(distill.get("filter_checks", 1)),
            )
            drg_zeta = ZetaParams(alpha_remote=float(drg.get("alpha_remote", 0.0)),
                                  min_width=float(drg.get("min_width", 0.05)), bumps=1)
            drg_params = DrgParams(
                n=int(drg.get("n", 2)),
                k=float(drg.get("k", 2.0)),
                alpha_gap=float(drg.get("alpha_gap", 1.2)),
                grid=tuple(drg.get("grid", (0.0, 0.25, 0.5, 0.75, 1.0))),
                zeta=drg_zeta,
                counters=int(drg.get("counters", 2)),
                workers=int(drg.get("workers", 1)),
            )
            cfg = cls(
                protocol=params,
                roster=tuple(dict(s) for s in roster),
                distill=distill_params,
                runs=int(experiment.get("runs", 10 ** 4)),
                master_seed=master_seed,
                workers=int(experiment.get("workers", 4)),
                calibration_runs=int(protocol.get("calibration_runs", 10 ** 4)),
                target_error=float(experiment.get("target_error", 1e-3)),
                target_leak=float(experiment.get("target_leak", 1e-3)),
                output_json=output.get("json"),
                output_csv=output.get("csv"),
                drg=drg_params,
                drg_steps=int(drg.get("steps", 10)),
                log_level=str(app.get("log_level", "INFO")),
                log_file=app.get("log_file"),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(f"配置无效: {e}") from e
        if cfg.runs < 1:
            raise ConfigError(f"runs必须至少为1，当前为{cfg.runs}")
        if cfg.workers < 1 or cfg.calibration_runs < 1 or cfg.drg_steps < 0:
            raise ConfigError("workers和calibration_runs必须为正，drg.steps必须非负")
        if not (0 < cfg.target_error < 1 and 0 < cfg.target_leak < 1):
            raise ConfigError("target_error和target_leak必须在(0,1)内")
        return cfg

    def with_overrides(self, runs=None, master_seed=None):
        data = self.to_dict()
        if runs is not None:
            data["experiment"]["runs"] = int(runs)
        if master_seed is not None:
            data["experiment"]["master_seed"] = int(master_seed)
        return ExperimentConfig.from_dict(data)

    def to_dict(self):
        protocol = self.protocol.to_dict()
        zeta = protocol.pop("zeta")
        protocol["calibration_runs"] = self.calibration_runs
        drg = self.drg.to_dict()
        drg_zeta = drg.pop("zeta")
        drg.update(alpha_remote=drg_zeta["alpha_remote"], min_width=drg_zeta["min_width"],
                   steps=self.drg_steps, workers=self.drg.workers)
        return {
            "protocol": protocol,
            "zeta": zeta,
            "adversaries": [dict(s) for s in self.roster],
            "distillation": self.distill.to_dict(),
            "experiment": {"runs": self.runs, "master_seed": self.master_seed, "workers": self.workers,
                           "target_error": self.target_error, "target_leak": self.target_leak},
            "output": {"json": self.output_json, "csv": self.output_csv},
            "drg": drg,
            "app": {"log_level": self.log_level, "log_file": self.log_file},
        }


@dataclass
class StatsReport:
    """实验统计报告"""

    code_version: str
    master_seed: int
    config: dict
    runs: int
    tau: float
    favorable_count: int
    favorable_rate: float
    dispersion_regenerations: int
    evaluation: pd.DataFrame
    legitimate: dict
    bsc: dict
    filters: dict = field(default_factory=dict)
    distillation: dict = None
    final_key_len: int = None
    scope: str = SCOPE_NOTE

    def to_dict(self):
        return {
            "code_version": self.code_version,
            "master_seed": self.master_seed,
            "config": self.config,
            "runs": self.runs,
            "tau": self.tau,
            "favorable_count": self.favorable_count,
            "favorable_rate": self.favorable_rate,
            "dispersion_regenerations": self.dispersion_regenerations,
            "evaluation": self.evaluation.to_dict(orient='index'),
            "legitimate": self.legitimate,
            "bsc": self.bsc,
            "filters": self.filters,
            "distillation": self.distillation,
            "final_key_len": self.final_key_len,
            "scope": self.scope,
        }


def _chunks(total, workers):
    """把[0, total)切成不超过workers个的连续区块"""
    count = max(1, min(workers, total))
    bounds = np.linspace(0, total, count + 1).astype(int)
    return [range(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]


def _run_chunk(indices, params, master_seed, strategies, controls, keep_records):
    summaries = []
    records = []
    regenerations = 0
    for r in indices:
        try:
            record = run_stream(params, master_seed, r)
        except ZetaSamplingError as e:
            raise ZetaSamplingError(f"第{r}次运行ζ采样失败 (n={params.n}, zeta={params.zeta}): {e}") from e
        for secrets in (record.secrets_a, record.secrets_b):
            regenerations += secrets.dispersion_retries + secrets.party_redraws
        summaries.append(summarize_run(record, strategies, controls))
        if keep_records:
            records.append(record.to_dict())
    return summaries, records, regenerations


def display_evaluation(frame, legitimate):
    """在日志中输出策略评估表"""
    table = PrettyTable()
    table.field_names = ["策略"] + list(frame.columns)
    table.add_row(["B (legitimate)"] + [_fmt(legitimate[c]) for c in frame.columns])
    for name, row in frame.iterrows():
        table.add_row([name] + [_fmt(row[c]) for c in frame.columns])
    table.align = "r"
    table.align["策略"] = "l"
    logger.info(f"策略评估结果:\n{table}")


def display_filters(filters):
    """在日志中对照输出各过滤器的接受率与误接受率"""
    table = PrettyTable()
    table.field_names = ["过滤器", "保留", "接受率", "误接受率"]
    for name, rates in filters.items():
        table.add_row([name, rates["kept"], _fmt(rates["accept_rate"]), _fmt(rates["false_accept_rate"])])
    table.align = "r"
    table.align["过滤器"] = "l"
    logger.info(f"运行过滤结果:\n{table}")


def _fmt(value):
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-"
    return f"{value:.4f}"


def run_experiment(cfg, distill=True, keep_records=False):
    """执行完整实验

    Args:
        cfg (ExperimentConfig): 已校验的配置
        distill (bool): 是否执行后处理链
        keep_records (bool): 是否保留每次运行的完整记录（占用内存较多）

    Returns:
        tuple: (StatsReport, 运行记录列表；keep_records为False时为空)
    """
    params = cfg.protocol
    # 精心准备阶段：在生成任何运行之前冻结策略
    strategies = elaborate_strategies(cfg.roster, params.n, params.k, params.zeta, cfg.master_seed)
    controls = (NoiseFloorControl(k=params.k),)
    logger.info(f"精心准备阶段完成，冻结了{len(strategies)}个策略")

    tau = params.tau
    if tau is None:
        tau = calibrate_threshold(params, cfg.calibration_runs, seed=cfg.master_seed)
    params = params.with_tau(tau)

    chunks = _chunks(cfg.runs, cfg.workers)
    results = [None] * len(chunks)
    with concurrent.futures.ThreadPoolExecutor(max_workers=len(chunks)) as executor:
        future_to_chunk = {
            executor.submit(_run_chunk, chunk, params, cfg.master_seed, strategies, controls, keep_records): idx
            for idx, chunk in enumerate(chunks)
        }
        for future in concurrent.futures.as_completed(future_to_chunk):
            idx = future_to_chunk[future]
            try:
                results[idx] = future.result()
            except Exception as e:
                logger.error(f"运行区块{idx}失败: {e}")
                raise
    summaries = [s for chunk_summaries, _, _ in results for s in chunk_summaries]
    records = [r for _, chunk_records, _ in results for r in chunk_records]
    regenerations = sum(reg for _, _, reg in results)
    logger.info(f"实例化阶段完成: {len(summaries)}次运行")

    evaluation = score_estimates(summaries, tau)
    legitimate = score_legitimate(summaries, tau)
    display_evaluation(evaluation, legitimate)
    favorable = np.asarray([s.favorable for s in summaries], dtype=bool)

    all_a = np.asarray([s.vA >= tau for s in summaries], dtype=np.uint8)
    all_b = np.asarray([s.vB >= tau for s in summaries], dtype=np.uint8)
    public = public_error_filter(all_a, all_b, cfg.distill.filter_block, cfg.distill.filter_checks,
                                 derive_stream(cfg.master_seed, "distillation", "public-filter"))
    masks = {"oracle": favorable, "public": public.keep, "none": np.ones(len(summaries), dtype=bool)}
    filters = {name: filter_rates(mask, favorable) for name, mask in masks.items()}
    blocks = public.blocks
    filters["public"].update(leaked_bits=public.leaked, blocks=blocks,
                             block_accept_rate=public.accepted_blocks / blocks if blocks else float('nan'))
    display_filters(filters)

    keep = masks[cfg.distill.filter]
    selected = [s for s, kept in zip(summaries, keep) if kept]
    bits_a = all_a[keep]
    bits_b = all_b[keep]
    eve_bits = {s.name: np.asarray([dict(r.estimates)[s.name] >= tau for r in selected], dtype=np.uint8)
                for s in strategies}
    bsc = {}
    if len(selected) > 0:
        bsc["ab"] = estimate_bsc(bits_a, bits_b).to_dict()
        bsc["ae"] = {name: estimate_bsc(bits_a, bits).to_dict() for name, bits in eve_bits.items()}

    report = StatsReport(
        code_version=CODE_VERSION,
        master_seed=cfg.master_seed,
        config=cfg.to_dict(),
        runs=len(summaries),
        tau=tau,
        favorable_count=int(favorable.sum()),
        favorable_rate=float(favorable.mean()),
        dispersion_regenerations=int(regenerations),
        evaluation=evaluation,
        legitimate=legitimate,
        bsc=bsc,
        filters=filters,
    )
    if distill:
        if len(selected) < cfg.distill.ad.L:
            logger.warning(f"可用于后处理的运行只有{len(selected)}次，跳过蒸馏")
        else:
            result = run_distillation(bits_a, bits_b, eve_bits, cfg.distill, cfg.master_seed)
            report.distillation = result.to_dict()
            report.final_key_len = result.key_len
    return report, records


def emit_report(report, path, fmt="json"):
    """输出报告：JSON为规范格式（键排序），CSV为策略评估表

    Raises:
        OSError: 路径不可写
        ValueError: 未知格式
    """
    if fmt not in ("json", "csv"):
        raise ValueError(f"未知的报告格式: {fmt}")
    try:
        if fmt == "json":
            with open(path, 'w', encoding='utf-8') as f:
                f.write(dumps_canonical(report.to_dict()))
                f.write("\n")
        else:
            report.evaluation.to_csv(path, encoding='utf-8', float_format='%.10g')
        logger.info(f"报告已保存: {path}")
    except OSError as e:
        logger.error(f"保存报告失败: {e}")
        raise
    return path
