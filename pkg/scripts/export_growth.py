#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
导出增长表 g(m, n) = log γ(m, n) 为CSV
可以用内置系统，也可以用JSON系统描述文件
"""

import sys
import os
import argparse
from dotenv import load_dotenv

# 添加项目根目录到Python路径
PROJECT_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
sys.path.insert(0, PROJECT_ROOT)

from app.core.errors import PowerInstabilityError, ReportIOError
from app.services.systems import load_system_document, load_system_file
from app.services.transition import TransitionCache, growth_table


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='增长表CSV导出工具')
    parser.add_argument('--file', type=str, help='系统描述文件路径')
    parser.add_argument('--c', type=float, default=2.0, help='未给出文件时使用示例系统，参数c默认2')
    parser.add_argument('--horizon', type=int, default=64, help='窗口M，默认64')
    parser.add_argument('--norm', type=str, default='two', choices=['one', 'two', 'infinity'], help='范数，默认two')
    parser.add_argument('--output', type=str, default='growth.csv', help='输出文件，默认growth.csv')
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    # 加载环境变量
    load_dotenv()

    try:
        if args.file:
            system = load_system_file(args.file)
        else:
            system = load_system_document({"kind": "paper-example", "c": args.c})

        print(f"系统: {system.label}")
        table = growth_table(TransitionCache(system, args.horizon), args.horizon, args.norm)
        table.to_csv(args.output)
    except ReportIOError as e:
        print(f"错误: {e}")
        return 3
    except PowerInstabilityError as e:
        print(f"错误: {e}")
        return 2

    summary = table.summary()
    print(f"- 共 {summary.entries} 个条目，g ∈ [{summary.g_min:.6g}, {summary.g_max:.6g}]")
    print(f"已写出 {args.output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
