#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
完美保密协议仿真命令行入口

Usage:
    python psp_cli.py simulate --config config.yaml --seed 7 [--records runs.jsonl]
    python psp_cli.py check-degradation --n 2 --k 4 --grid 5
    python psp_cli.py check-indist --n 2 --k 2 --source mixed|twopoint|zeta
    python psp_cli.py drg-audit --steps 30 [--save-state drg.json] | --state drg.json
    python psp_cli.py distill --eps-ab 0.1 --eps-ae 0.25 --L 7 | --bits bits.json
    python psp_cli.py pipeline --config config.yaml --seed 7 --out report.json

结果JSON输出到stdout（或--out指定的文件），日志与汇总表输出到stderr。
退出码：0成功，1参数或配置错误，2运行时错误。
"""

import argparse
import dataclasses
import json
import sys

import numpy as np
from prettytable import PrettyTable

from bayes_oracle import JointDistribution, check_degradation, check_indistinguishability, uniform_grid_prior
from core_model import all_permutations
from deep_random import DrgState, drg_audit, run_drg, sample_zeta
from distillation import AdParams, ad_rates, run_distillation, simulate_ad_rates, unpack_bits
from experiment import ExperimentConfig, emit_report, run_experiment
from utils import derive_stream, dumps_canonical, get_logger, load_config, load_json, save_json, setup_logging

logger = get_logger("psp_cli")


class UsageError(ValueError):
    """命令行参数无效"""


class _Parser(argparse.ArgumentParser):

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="主种子（覆盖配置中的master_seed）")
    common.add_argument("--config", default=None, help="YAML/JSON配置文件")
    common.add_argument("--out", default=None, help="结果JSON输出路径，默认stdout")
    common.add_argument("--log-level", default=None, help="日志级别")
    common.add_argument("--log-file", default=None, help="日志文件，默认只输出到stderr")

    parser = _Parser(prog="psp_cli", description="Deep Random完美保密协议仿真")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", parents=[common], help="只执行协议运行与对手评估")
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--records", default=None, help="把每次运行的完整记录写成JSON lines")

    p = sub.add_parser("check-degradation", parents=[common], help="精确退化性检验（n ≤ 4）")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=float, required=True)
    p.add_argument("--grid", default="5", help="网格点数，或逗号分隔的网格点")

    p = sub.add_parser("check-indist", parents=[common], help="α-不可区分性检验（n ≤ 4）")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--k", type=float, default=2.0)
    p.add_argument("--alpha", type=float, default=1.2)
    p.add_argument("--source", choices=("mixed", "twopoint", "zeta"), default="mixed",
                   help="生成元：mixed为½δ(e0,e0)+½δ(e0,e1)，twopoint为δ(e0,e0)，zeta为ζ采样的分布对")
    p.add_argument("--family", choices=("orbit", "control"), default="orbit",
                   help="orbit为公共置换轨道，control为单一分布对照")

    p = sub.add_parser("drg-audit", parents=[common], help="运行或重放DRG并审计击败比值")
    p.add_argument("--state", default=None, help="已保存的DRG状态文件")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--save-state", default=None)

    p = sub.add_parser("distill", parents=[common], help="优势蒸馏、信息协调与隐私放大")
    p.add_argument("--bits", default=None, help='比特文件 {"a": ..., "b": ..., "eve": {...}}')
    p.add_argument("--eps-ab", type=float, default=0.1)
    p.add_argument("--eps-ae", type=float, default=0.25)
    p.add_argument("--raw", type=int, default=100_000, help="合成BSC的原始比特数")
    p.add_argument("--L", type=int, default=None)
    p.add_argument("--trials", type=int, default=100_000)

    p = sub.add_parser("pipeline", parents=[common], help="完整流程：运行、评估与后处理")
    p.add_argument("--runs", type=int, default=None)
    return parser


def _load_experiment_config(args):
    data = load_config(args.config) if args.config else {}
    cfg = ExperimentConfig.from_dict(data)
    return cfg.with_overrides(runs=getattr(args, "runs", None), master_seed=args.seed)


def _parse_grid(text):
    if "," in text:
        return [float(v) for v in text.split(",") if v.strip()]
    return int(text)


def _output(result, out):
    if out:
        if not save_json(result, out):
            raise OSError(f"无法写入输出文件: {out}")
    else:
        sys.stdout.write(dumps_canonical(result))
        sys.stdout.write("\n")


def _summary(title, rows):
    table = PrettyTable()
    table.field_names = ["项目", "值"]
    for key, value in rows:
        table.add_row([key, value])
    table.align = "l"
    logger.info(f"{title}:\n{table}")


def cmd_simulate(args, cfg):
    report, records = run_experiment(cfg, distill=False, keep_records=bool(args.records))
    if args.records:
        with open(args.records, 'w', encoding='utf-8') as f:
            for record in records:
                f.write(json.dumps(json.loads(dumps_canonical(record)), ensure_ascii=False, sort_keys=True))
                f.write("\n")
        logger.info(f"已写入{len(records)}条运行记录: {args.records}")
    _summary("仿真汇总", [("runs", report.runs), ("tau", f"{report.tau:.6f}"),
                         ("favorable_rate", f"{report.favorable_rate:.4f}")])
    return report.to_dict()


def cmd_pipeline(args, cfg):
    report, _ = run_experiment(cfg, distill=True)
    if cfg.output_csv:
        emit_report(report, cfg.output_csv, "csv")
    _summary("流程汇总", [("runs", report.runs), ("favorable_rate", f"{report.favorable_rate:.4f}"),
                         ("final_key_len", report.final_key_len)])
    return report.to_dict()


def cmd_check_degradation(args, cfg):
    joint = uniform_grid_prior(args.n, _parse_grid(args.grid))
    report = check_degradation(joint, args.k)
    _summary("退化性检验", [("MSE(ω_T)", report.mse_unbiased), ("MMSE", report.mmse), ("ratio", report.ratio)])
    return report.to_dict()


def _orbit(joint, n):
    """公共置换下的轨道（去重）"""
    members = []
    for pi in all_permutations(n):
        candidate = joint.permuted(pi, pi)
        if not any(candidate.same_as(m) for m in members):
            members.append(candidate)
    return members


def _indist_generator(args, cfg):
    n = args.n
    e0 = np.eye(n)[0]
    if args.source == "twopoint":
        # 轨道为 {δ(e_l, e_l)}，n = 2时即 {δ((1,0),(1,0)), δ((0,1),(0,1))}
        return JointDistribution.dirac_pair(e0, e0)
    if args.source == "mixed":
        e1 = np.eye(n)[1 % n]
        return JointDistribution.mixture([(0.5, JointDistribution.dirac_pair(e0, e0)),
                                          (0.5, JointDistribution.dirac_pair(e0, e1))])
    rng = derive_stream(cfg.master_seed, "check-indist", n)
    zeta = cfg.protocol.zeta
    return JointDistribution.product(sample_zeta(zeta, n, rng), sample_zeta(zeta, n, rng))


def cmd_check_indist(args, cfg):
    generator = _indist_generator(args, cfg)
    family = [generator] if args.family == "control" else _orbit(generator, args.n)
    report = check_indistinguishability(family, args.k, alpha=args.alpha)
    result = report.to_dict()
    result["family_size"] = len(family)
    _summary("不可区分性检验", [("LHS", report.lhs), ("RHS", report.rhs), ("ratio", report.ratio),
                              ("pass", report.passed)])
    return result


def cmd_drg_audit(args, cfg):
    params = cfg.drg
    if args.state:
        data = load_json(args.state)
        if data is None:
            raise ValueError(f"无法读取DRG状态文件: {args.state}")
        state = DrgState.from_dict(data)
        if args.steps:
            state = run_drg(params, args.steps, state.master_seed, state=state)
    else:
        steps = cfg.drg_steps if args.steps is None else args.steps
        state = run_drg(params, steps, cfg.master_seed)
    if args.save_state and not save_json(state.to_dict(), args.save_state):
        raise OSError(f"无法保存DRG状态: {args.save_state}")
    report = drg_audit(state, params)
    result = report.to_dict()
    result["entropy_bits"] = state.entropy_bits
    _summary("DRG审计", [("steps", report.steps), ("min_ratio", report.min_ratio),
                        ("shortfalls", len(report.shortfalls)), ("pass", report.passed)])
    return result


def cmd_distill(args, cfg):
    params = cfg.distill
    if args.L is not None:
        params = dataclasses.replace(params, ad=AdParams(args.L))
    L = params.ad.L
    result = {"L": L}
    if args.bits:
        data = load_json(args.bits)
        if data is None:
            raise ValueError(f"无法读取比特文件: {args.bits}")
        try:
            a = unpack_bits(data["a"])
            b = unpack_bits(data["b"])
            eves = {name: unpack_bits(packed) for name, packed in data.get("eve", {}).items()}
        except (KeyError, TypeError) as e:
            raise ValueError(f"比特文件格式错误: {e}") from e
    else:
        for eps in (args.eps_ab, args.eps_ae):
            if not 0.0 <= eps <= 1.0:
                raise ValueError(f"误码率必须在[0,1]内: {eps}")
        rng = derive_stream(cfg.master_seed, "synthetic-bsc", args.raw)
        a = rng.integers(0, 2, size=args.raw, dtype=np.uint8)
        b = a ^ (rng.random(args.raw) < args.eps_ab).astype(np.uint8)
        eves = {"synthetic": a ^ (rng.random(args.raw) < args.eps_ae).astype(np.uint8)}
        result["closed_form"] = ad_rates(args.eps_ab, args.eps_ae, L)
        result["monte_carlo"] = simulate_ad_rates(args.eps_ab, args.eps_ae, L, args.trials,
                                                  derive_stream(cfg.master_seed, "ad-rates", L))
    report = run_distillation(a, b, eves, params, cfg.master_seed)
    result["distillation"] = report.to_dict()
    _summary("后处理汇总", [("raw_bits", report.raw_bits), ("accept_rate", f"{report.accept_rate:.4f}"),
                          ("leaked_bits", report.leaked_bits), ("key_len", report.key_len)])
    return result


COMMANDS = {
    "simulate": cmd_simulate,
    "check-degradation": cmd_check_degradation,
    "check-indist": cmd_check_indist,
    "drg-audit": cmd_drg_audit,
    "distill": cmd_distill,
    "pipeline": cmd_pipeline,
}


def main(argv=None):
    """主函数，返回进程退出码"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        sys.stderr.write(f"参数错误: {e}\n")
        return 1
    except SystemExit as e:
        return int(e.code or 0)

    setup_logging(args.log_level or "INFO", args.log_file)
    try:
        cfg = _load_experiment_config(args)
        if args.log_file is None and cfg.log_file:
            setup_logging(args.log_level or cfg.log_level, cfg.log_file)
        result = COMMANDS[args.command](args, cfg)
        out = args.out
        if out is None and args.command in ("simulate", "pipeline"):
            out = cfg.output_json
        _output(result, out)
        return 0
    except (ValueError, FileNotFoundError) as e:
        logger.error(f"参数或配置错误: {e}")
        return 1
    except Exception as e:
        logger.error(f"程序执行过程中发生错误: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
