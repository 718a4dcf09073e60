from sqlmodel import SQLModel, Field

from app.models.base import TimestampMixin
from app.models.certificates import Classification
from app.models.enums import Concept, Norm


class GrowthSummary(SQLModel):
    """增长表概要：极值与奇异条目数量"""
    horizon: int
    norm: Norm
    entries: int
    g_min: float
    g_max: float
    abs_max: float
    neg_inf_entries: int
    exported: bool = False


class SweepPoint(SQLModel):
    value: float
    classification: Classification


class SweepResult(SQLModel):
    """参数扫描结果，附带参考阈值"""
    parameter: str
    concept: Concept
    points: list[SweepPoint] = Field(default_factory=list)
    monotone: bool = True
    boundary: tuple[float, float] | None = None
    boundary_width: float | None = None
    bisection_refused: bool = False
    claimed_threshold: float | None = None
    claim: str | None = None
    case_offsets: dict[str, float] | None = None  # 示例系统按奇偶情形的偏移量
    note: str = ""

    def to_record(self) -> dict:
        return {
            "parameter": self.parameter,
            "concept": self.concept.value,
            "values": [point.value for point in self.points],
            "verdicts": [point.classification.verdict.value for point in self.points],
            "classifications": [point.classification.to_record() for point in self.points],
            "monotone": self.monotone,
            "boundary": list(self.boundary) if self.boundary else None,
            "boundary_width": self.boundary_width,
            "bisection_refused": self.bisection_refused,
            "claimed_threshold": self.claimed_threshold,
            "claim": self.claim,
            "case_offsets": self.case_offsets,
            "note": self.note,
        }


class AnalysisReport(TimestampMixin):
    """一次运行的报告文档"""
    config: dict
    system: dict
    growth_summary: dict | None = None
    certificates: list[dict] = Field(default_factory=list)
    classifications: list[dict] = Field(default_factory=list)
    criterion_fits: list[dict] = Field(default_factory=list)
    equivalence: list[dict] = Field(default_factory=list)
    sweep: dict | None = None
