#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
幂不稳定性分析命令行工具

子命令：analyze, growth, certify, criterion, equivalence, sweep
退出码：0 分析完成（与结论无关），2 配置错误，3 读写错误
"""

import argparse
import sys

from dotenv import load_dotenv

from app.core.errors import PowerInstabilityError, ReportIOError
from app.models.config import SYSTEM_KINDS
from app.services.report_service import ReportService, build_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3

# 子命令对应的分析步骤
COMMAND_SECTIONS = {
    "analyze": ("growth", "certify", "criterion", "equivalence", "sweep"),
    "growth": ("growth",),
    "certify": ("growth", "certify"),
    "criterion": ("criterion",),
    "equivalence": ("equivalence",),
    "sweep": ("sweep",),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, help='JSON配置文件路径')
    common.add_argument('--system', type=str, choices=SYSTEM_KINDS, help='系统类型')
    common.add_argument('--system-file', type=str, help='显式系统描述文件（system=explicit）')
    common.add_argument('--c', type=float, help='示例系统的参数 c')
    common.add_argument('--value', type=float, help='常系数标量系统的系数')
    common.add_argument('--dim', type=int, help='随机对角系统的维数')
    common.add_argument('--system-seed', type=int, help='随机对角系统的种子')
    common.add_argument('--log-gain-range', type=float, nargs=2, metavar=('LO', 'HI'), help='随机对角系统的对数增益区间')
    common.add_argument('--concept', type=str, action='append', choices=['UPIS', 'PIS', 'SPIS'], help='要分类的概念，可重复')
    common.add_argument('--variant', type=str, action='append', choices=['THM2', 'PROP3', 'COR4'], help='判据形式，可重复')
    common.add_argument('--schedule', type=int, nargs='+', help='嵌套窗口序列，默认 32 64 128 256')
    common.add_argument('--epsilon', type=float, help='分类阈值 epsilon')
    common.add_argument('--l-budget', type=float, help='log N 的上限')
    common.add_argument('--gap-delta', type=float, help='SPIS 中 s < 1/r 的间隔')
    common.add_argument('--d-grid', type=float, nargs='+', help='判据拟合的 d 网格')
    common.add_argument('--kappa', type=float, help='证书构造判据时的 κ')
    common.add_argument('--seed', type=int, help='抽样种子')
    common.add_argument('--sample-count', type=int, help='证书校验的抽样数')
    common.add_argument('--norm', type=str, choices=['one', 'two', 'infinity'], help='范数')
    common.add_argument('--format', type=str, choices=['json', 'csv', 'both'], help='输出格式')
    common.add_argument('--no-timestamp', action='store_true', help='报告中不写生成时间')
    common.add_argument('--output-dir', type=str, help='输出目录，默认 ./out')

    parser = argparse.ArgumentParser(description='线性离散时间系统幂不稳定性分析工具')
    subparsers = parser.add_subparsers(dest='command', required=True)
    for command in COMMAND_SECTIONS:
        sub = subparsers.add_parser(command, parents=[common])
        if command in ('analyze', 'sweep'):
            sub.add_argument('--parameter', type=str, choices=['c', 'value'], help='扫描参数')
            sub.add_argument('--sweep-concept', type=str, choices=['UPIS', 'PIS', 'SPIS'], help='扫描的概念')
            sub.add_argument('--grid', type=float, nargs='+', help='扫描网格')
            sub.add_argument('--bisect', type=float, nargs=2, metavar=('LO', 'HI'), help='二分区间')
            sub.add_argument('--width', type=float, help='二分终止宽度')
    return parser


def overrides_from_args(args: argparse.Namespace) -> dict:
    """把命令行参数转换成配置字段，未给出的参数不覆盖"""
    overrides = {
        "system": args.system,
        "system_file": args.system_file,
        "c": args.c,
        "value": args.value,
        "dim": args.dim,
        "system_seed": args.system_seed,
        "log_gain_range": args.log_gain_range,
        "concepts": args.concept,
        "variants": args.variant,
        "schedule": args.schedule,
        "epsilon": args.epsilon,
        "l_budget": args.l_budget,
        "gap_delta": args.gap_delta,
        "d_grid": args.d_grid,
        "kappa": args.kappa,
        "seed": args.seed,
        "sample_count": args.sample_count,
        "norm": args.norm,
        "format": args.format,
        "output_dir": args.output_dir,
        "timestamp": False if args.no_timestamp else None,
    }
    if args.system_file and not args.system:
        overrides["system"] = "explicit"
    sweep_flags = {
        "parameter": getattr(args, "parameter", None),
        "concept": getattr(args, "sweep_concept", None),
        "grid": getattr(args, "grid", None),
        "bisect": getattr(args, "bisect", None),
        "width": getattr(args, "width", None),
    }
    sweep = {key: value for key, value in sweep_flags.items() if value is not None}
    if sweep:
        overrides["sweep"] = sweep
    return overrides


def main(argv: list[str] | None = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)

    try:
        config = build_config(args.config, overrides_from_args(args))
        if args.command == "sweep" and config.sweep is None:
            print("错误: sweep 需要 --grid 或 --bisect（或配置文件中的 sweep 设置）")
            return EXIT_CONFIG
        service = ReportService(config)
        report, tables = service.run_analyze(COMMAND_SECTIONS[args.command])
        service.write(report, tables)
    except ReportIOError as e:
        print(f"错误: {e}")
        return EXIT_IO
    except PowerInstabilityError as e:
        print(f"错误: {e}")
        return EXIT_CONFIG

    print("分析完成")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
