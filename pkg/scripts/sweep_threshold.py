#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
定位示例系统的分类边界
对参数 c 做二分，输出实测的边界区间，并与参考阈值并列给出

例如：
    python scripts/sweep_threshold.py --concept SPIS --lo 1.5 --hi 4.0 --width 0.05
"""

import sys
import os
import argparse
from dotenv import load_dotenv

# 添加项目根目录到Python路径
PROJECT_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
sys.path.insert(0, PROJECT_ROOT)

from app.core.errors import PowerInstabilityError, ReportIOError
from app.models.config import SweepSpec
from app.services.report_service import build_config, run_sweep

if __name__ == "__main__":
    # 解析命令行参数
    parser = argparse.ArgumentParser(description='示例系统分类边界的二分定位')
    parser.add_argument('--concept', type=str, default='SPIS', choices=['UPIS', 'PIS', 'SPIS'], help='概念，默认SPIS')
    parser.add_argument('--lo', type=float, default=1.5, help='区间左端点，默认1.5')
    parser.add_argument('--hi', type=float, default=4.0, help='区间右端点，默认4.0')
    parser.add_argument('--width', type=float, default=0.05, help='终止宽度，默认0.05')
    parser.add_argument('--grid', type=float, nargs='+', help='可选：先在网格上分类')
    args = parser.parse_args()

    # 加载环境变量
    load_dotenv()

    try:
        config = build_config(overrides={"system": "paper-example", "timestamp": False})
        spec = SweepSpec(parameter="c", concept=args.concept, grid=args.grid,
                         bisect=(args.lo, args.hi), width=args.width)
        result = run_sweep(config, spec=spec)
    except ReportIOError as e:
        print(f"错误: {e}")
        sys.exit(3)
    except PowerInstabilityError as e:
        print(f"错误: {e}")
        sys.exit(2)

    if result.bisection_refused:
        print(f"未进行二分: {result.note}")
        sys.exit(0)

    lo, hi = result.boundary
    print(f"{args.concept} 实测边界: c ∈ [{lo:.6g}, {hi:.6g}]，宽度 {result.boundary_width:.3g}")
    if result.claim:
        print(f"参考阈值: {result.claim}")
    if result.case_offsets:
        binding = max(result.case_offsets, key=result.case_offsets.get)
        print(f"边界处起决定作用的奇偶情形: {binding}")
