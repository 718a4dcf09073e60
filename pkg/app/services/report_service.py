import json
import math
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any

import pandas as pd

from app.core.config import Settings, get_settings
from app.core.errors import ConfigError, InvalidParameterError, ReportIOError
from app.models.config import AnalysisConfig, SweepSpec
from app.models.enums import Concept, Verdict
from app.models.reports import AnalysisReport, SweepPoint, SweepResult
from app.services.certify import classify, verify_certificate
from app.services.przyluski import check_equivalence, fit_criterion
from app.services.systems import OperatorSeq, load_system_document, load_system_file
from app.services.transition import GrowthTable, TransitionCache, growth_table, paper_example_case_offsets

SECTIONS = ("growth", "certify", "criterion", "equivalence", "sweep")

# 分类结论的顺序，用于检查扫描结果的单调性
VERDICT_RANK = {Verdict.REJECTED: 0, Verdict.INCONCLUSIVE: 1, Verdict.CERTIFIED: 2}

# 各参数族的参考阈值，只作为参考信息写进报告
CLAIMED_THRESHOLDS: dict[tuple[str, Concept], tuple[float | None, str]] = {
    ("paper-example", Concept.UPIS): (None, "对任意 c 都不是一致幂不稳定"),
    ("paper-example", Concept.PIS): (1.0, "c > 1"),
    ("paper-example", Concept.SPIS): (math.e, "c > e"),
    ("constant", Concept.UPIS): (1.0, "|λ| > 1"),
    ("constant", Concept.PIS): (1.0, "|λ| > 1"),
    ("constant", Concept.SPIS): (1.0, "|λ| > 1"),
}


def sanitize(value: Any) -> Any:
    """转换成可写入JSON的结构，非有限浮点数写成字符串"""
    if isinstance(value, dict):
        return {str(k): sanitize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [sanitize(v) for v in value]
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, bool) or value is None or isinstance(value, (int, str)):
        return value
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(value, datetime):
        return value.isoformat()
    if isinstance(value, Path):
        return str(value)
    if hasattr(value, "item"):
        # numpy 标量
        return sanitize(value.item())
    return str(value)


def build_config(config_path: str | None = None, overrides: dict | None = None,
                 settings: Settings | None = None) -> AnalysisConfig:
    """按 环境默认值 -> 配置文件 -> 命令行参数 的顺序合并并校验配置"""
    settings = settings or get_settings()
    data: dict[str, Any] = {
        "epsilon": settings.epsilon,
        "l_budget": settings.l_budget,
        "gap_delta": settings.gap_delta,
        "kappa": settings.kappa,
        "criterion_budget": settings.criterion_budget,
        "sample_count": settings.sample_count,
        "stride": settings.stride,
        "export_horizon": settings.export_horizon,
        "output_dir": str(settings.output_dir),
    }
    if config_path:
        try:
            text = Path(config_path).read_text(encoding="utf-8")
        except OSError as e:
            raise ReportIOError(f"读取配置文件 {config_path} 失败: {e}") from e
        try:
            file_data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError({"config": f"JSON格式错误 (第{e.lineno}行, 第{e.colno}列): {e.msg}"}) from e
        if not isinstance(file_data, dict):
            raise ConfigError({"config": "配置文件必须是JSON对象"})
        data.update(file_data)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "sweep" and isinstance(data.get("sweep"), dict):
            data["sweep"] = {**data["sweep"], **value}
        else:
            data[key] = value
    return AnalysisConfig.parse(data)


class ReportService:
    """分析服务：按配置加载系统，运行各项分析，写出报告"""

    def __init__(self, config: AnalysisConfig):
        self.config = config
        self._system: OperatorSeq | None = None
        self._cache: TransitionCache | None = None
        self._table: GrowthTable | None = None

    # ---- 系统与缓存 ----
    @property
    def system(self) -> OperatorSeq:
        if self._system is None:
            if self.config.system == "explicit":
                self._system = load_system_file(self.config.system_file)
            else:
                self._system = load_system_document(self.config.system_document())
        return self._system

    @property
    def horizon(self) -> int:
        return self.config.schedule[-1]

    @property
    def cache(self) -> TransitionCache:
        if self._cache is None:
            self._cache = TransitionCache(self.system, self.horizon, self.config.stride)
        return self._cache

    @property
    def table(self) -> GrowthTable:
        if self._table is None:
            self._table = growth_table(self.cache, self.horizon, self.config.norm)
        return self._table

    def system_record(self) -> dict:
        return {
            "label": self.system.label,
            "kind": self.system.kind.value,
            "dim": self.system.dim,
            "description": self.system.description,
        }

    # ---- 各项分析 ----
    def run_growth(self) -> dict:
        print(f"- 计算增长表: M={self.horizon}, norm={self.config.norm.value}")
        summary = self.table.summary()
        summary.exported = self.config.format in ("csv", "both")
        print(f"- g 的范围: [{summary.g_min:.6g}, {summary.g_max:.6g}]，奇异条目 {summary.neg_inf_entries} 个")
        record = summary.model_dump()
        record["export_horizon"] = min(self.horizon, self.config.export_horizon)
        return record

    def run_certify(self) -> tuple[list[dict], list[dict]]:
        certificates, classifications = [], []
        for concept in self.config.concepts:
            result = classify(
                self.system, concept, self.config.schedule, self.config.epsilon,
                self.config.l_budget, self.config.gap_delta, self.config.norm,
                cache=self.cache, table=self.table,
            )
            print(f"- {concept.value}: {result.verdict.value}"
                  + (f"，斜率 {result.slope:.6g}" if result.slope is not None else ""))
            classifications.append(result.to_record())

            cert = result.certificate
            if cert is None:
                certificates.append({"concept": concept.value, "feasible": False, "window": self.config.schedule[0]})
                continue
            verification = verify_certificate(self.system, cert, self.config.sample_count,
                                              self.config.seed, self.cache)
            record = {"feasible": True, **cert.to_record(), "verification": verification.to_record()}
            certificates.append(record)
        return certificates, classifications

    def run_criterion(self) -> list[dict]:
        window = self.config.schedule[0]
        fits = []
        for variant in self.config.variants:
            fit = fit_criterion(self.system, window, variant, self.config.d_grid, self.config.criterion_budget,
                                self.config.gap_delta, self.config.norm, self.config.seed, self.cache)
            if fit is None:
                print(f"- {variant.value}: 在 M={window} 上不可行")
                fits.append({"variant": variant.value, "feasible": False, "window": window})
            else:
                print(f"- {variant.value}: D={fit.D:.6g}, d={fit.d:.6g}, c={fit.c:.6g}")
                fits.append({"feasible": True, **fit.to_record()})
        return fits

    def run_equivalence(self) -> list[dict]:
        window = self.config.schedule[0]
        records = []
        for variant in self.config.variants:
            reports = check_equivalence(
                self.system, window, variant, seeds=[self.config.seed], kappa=self.config.kappa,
                L_budget=self.config.l_budget, gap_delta=self.config.gap_delta, d_grid=self.config.d_grid,
                criterion_budget=self.config.criterion_budget, sample_count=self.config.sample_count,
                norm=self.config.norm, cache=self.cache,
            )
            for report in reports:
                print(f"- {variant.value} {report.direction}: {report.status}")
                records.append(report.to_record())
        return records

    def run_sweep(self, spec: SweepSpec | None = None) -> SweepResult:
        """按网格或二分对参数扫描分类结论"""
        spec = spec or self.config.sweep
        if spec is None:
            raise InvalidParameterError("没有给出扫描设置")
        if spec.parameter == "c" and self.config.system != "paper-example":
            raise InvalidParameterError("参数 c 只能用于 paper-example 系统")
        if spec.parameter == "value" and self.config.system != "constant":
            raise InvalidParameterError("参数 value 只能用于 constant 系统")

        claimed, claim = CLAIMED_THRESHOLDS.get((self.config.system, spec.concept), (None, None))
        result = SweepResult(parameter=spec.parameter, concept=spec.concept,
                             claimed_threshold=claimed, claim=claim)
        verdicts: dict[float, SweepPoint] = {}

        def evaluate(value: float) -> Verdict:
            if value not in verdicts:
                service = ReportService(self.config.with_parameter(spec.parameter, value))
                classification = classify(
                    service.system, spec.concept, self.config.schedule, self.config.epsilon,
                    self.config.l_budget, self.config.gap_delta, self.config.norm, cache=service.cache,
                )
                print(f"- {spec.parameter}={value:.6g}: {classification.verdict.value}")
                verdicts[value] = SweepPoint(value=value, classification=classification)
            return verdicts[value].classification.verdict

        notes = []
        for value in spec.grid or []:
            evaluate(float(value))
        result.monotone = self._monotone(verdicts)
        if not result.monotone:
            notes.append("网格上的结论不单调")

        if spec.bisect is not None:
            lo, hi = (float(v) for v in spec.bisect)
            lo_verdict, hi_verdict = evaluate(lo), evaluate(hi)
            if not result.monotone:
                result.bisection_refused = True
                notes.append("结论不单调，拒绝二分")
            elif lo_verdict != Verdict.REJECTED or hi_verdict != Verdict.CERTIFIED:
                result.bisection_refused = True
                notes.append(f"区间端点的结论为 {lo_verdict.value}/{hi_verdict.value}，需要 rejected/certified，拒绝二分")
            else:
                while hi - lo > spec.width:
                    mid = 0.5 * (lo + hi)
                    if evaluate(mid) == Verdict.CERTIFIED:
                        hi = mid
                    else:
                        lo = mid
                result.boundary = (lo, hi)
                result.boundary_width = hi - lo
                result.monotone = self._monotone(verdicts)
                if any(p.classification.verdict == Verdict.INCONCLUSIVE for p in verdicts.values()):
                    notes.append("二分时 inconclusive 按未认证处理")
                if self.config.system == "paper-example":
                    boundary_cert = verdicts[hi].classification
                    result.case_offsets = paper_example_case_offsets(
                        hi, boundary_cert.a, boundary_cert.b, self.config.schedule[-1])
                print(f"- 边界区间: [{lo:.6g}, {hi:.6g}]" + (f"，参考阈值 {claim}" if claim else ""))

        result.points = [verdicts[value] for value in sorted(verdicts)]
        result.note = "；".join(notes)
        return result

    @staticmethod
    def _monotone(verdicts: dict[float, SweepPoint]) -> bool:
        ranks = [VERDICT_RANK[verdicts[v].classification.verdict] for v in sorted(verdicts)]
        return all(a <= b for a, b in zip(ranks, ranks[1:]))

    # ---- 组合与输出 ----
    def run_analyze(self, sections=SECTIONS) -> tuple[AnalysisReport, dict[str, pd.DataFrame]]:
        """按 sections 运行分析，返回报告文档和CSV附表"""
        print(f"分析系统: {self.system.label}")
        report = AnalysisReport(config=self.config.model_dump(mode="json"), system=self.system_record())
        tables: dict[str, pd.DataFrame] = {}

        if "growth" in sections:
            report.growth_summary = self.run_growth()
            export = self.table.restrict(min(self.horizon, self.config.export_horizon))
            tables["growth"] = export.to_frame()
        if "certify" in sections:
            report.certificates, report.classifications = self.run_certify()
            tables["evidence"] = pd.DataFrame([
                {"concept": c["concept"], "horizon": M, "offset": L, "verdict": c["verdict"]}
                for c in report.classifications for M, L in c["evidence"]
            ], columns=["concept", "horizon", "offset", "verdict"])
        if "criterion" in sections:
            report.criterion_fits = self.run_criterion()
        if "equivalence" in sections:
            report.equivalence = self.run_equivalence()
        if "sweep" in sections and self.config.sweep is not None:
            sweep = self.run_sweep()
            report.sweep = sweep.to_record()
            tables["sweep"] = self.sweep_frame(sweep)
        return report, tables

    @staticmethod
    def sweep_frame(sweep: SweepResult) -> pd.DataFrame:
        return pd.DataFrame([
            {sweep.parameter: p.value, "verdict": p.classification.verdict.value,
             "a": p.classification.a, "b": p.classification.b, "slope": p.classification.slope}
            for p in sweep.points
        ], columns=[sweep.parameter, "verdict", "a", "b", "slope"])

    def document(self, report: AnalysisReport) -> dict:
        """报告JSON的顶层结构，时间戳可关闭"""
        document = {
            "config": report.config,
            "system": report.system,
            "growth_summary": report.growth_summary,
            "certificates": report.certificates,
            "classifications": report.classifications,
            "criterion_fits": report.criterion_fits,
            "equivalence": report.equivalence,
            "sweep": report.sweep,
        }
        if self.config.timestamp:
            document["generated_at"] = report.generated_at
        return sanitize(document)

    def write(self, report: AnalysisReport, tables: dict[str, pd.DataFrame]) -> list[Path]:
        """写出 report.json 与CSV附表"""
        output_dir = Path(self.config.output_dir)
        written = []
        try:
            output_dir.mkdir(parents=True, exist_ok=True)
            if self.config.format in ("json", "both"):
                path = output_dir / "report.json"
                text = json.dumps(self.document(report), indent=2, ensure_ascii=False, allow_nan=False)
                path.write_text(text + "\n", encoding="utf-8")
                written.append(path)
            if self.config.format in ("csv", "both"):
                for name, frame in tables.items():
                    path = output_dir / f"{name}.csv"
                    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
                    written.append(path)
        except OSError as e:
            raise ReportIOError(f"写入报告到 {output_dir} 失败: {e}") from e
        for path in written:
            print(f"- 已写出 {path}")
        return written


def run_analyze(config: AnalysisConfig, sections=SECTIONS, write: bool = True) -> dict:
    """运行分析并（可选）写出报告，返回报告文档"""
    service = ReportService(config)
    report, tables = service.run_analyze(sections)
    if write:
        service.write(report, tables)
    return service.document(report)


def run_sweep(config: AnalysisConfig, parameter: str | None = None, spec: SweepSpec | None = None) -> SweepResult:
    """单独运行参数扫描"""
    spec = spec or config.sweep
    if spec is None:
        raise InvalidParameterError("没有给出扫描设置")
    if parameter is not None:
        spec = spec.model_copy(update={"parameter": parameter})
    return ReportService(config).run_sweep(spec)
