import math
from sqlmodel import SQLModel, Field

from app.models.base import exp_or_inf
from app.models.enums import Concept, Norm, Verdict


class Certificate(SQLModel):
    """不稳定性证书，以对数形式保存 (L, a, b) = (log N, log(1/r), log s)"""
    concept: Concept
    L: float = Field(ge=0.0)
    a: float = Field(gt=0.0)
    b: float = Field(ge=0.0)
    window: int = Field(ge=0)
    slack: float | None = None  # 窗口内 g(m,n) - [a(m-n) - b n - L] 的最小值；None 表示尚未在增长表上评估
    norm: Norm = Norm.TWO
    rate_boundary: bool = False
    warnings: list[str] = Field(default_factory=list)

    @property
    def N(self) -> float:
        return exp_or_inf(self.L)

    @property
    def r(self) -> float:
        return math.exp(-self.a)

    @property
    def s(self) -> float:
        return exp_or_inf(self.b)

    def to_record(self) -> dict:
        """报告中的证书记录"""
        return {
            "concept": self.concept.value,
            "N": self.N,
            "r": self.r,
            "s": self.s,
            "L": self.L,
            "a": self.a,
            "b": self.b,
            "window": self.window,
            "slack": self.slack,
            "norm": self.norm.value,
            "rate_boundary": self.rate_boundary,
            "warnings": list(self.warnings),
        }


class EvidencePoint(SQLModel):
    horizon: int
    offset: float  # L*(M_k; a, b)，可能为 +inf


class Classification(SQLModel):
    """嵌套窗口上的分类结论"""
    concept: Concept
    verdict: Verdict
    a: float
    b: float
    slope: float | None = None  # 最后三个证据点的拟合斜率
    evidence: list[EvidencePoint] = Field(default_factory=list)
    epsilon: float
    l_budget: float
    gap_delta: float
    schedule: list[int]
    certificate: Certificate | None = None
    probe: bool = False  # 拟合不可行时证据按探测速率计算
    rate_boundary: bool = False
    note: str = ""

    def to_record(self) -> dict:
        return {
            "concept": self.concept.value,
            "verdict": self.verdict.value,
            "a": self.a,
            "b": self.b,
            "slope": self.slope,
            "evidence": [[point.horizon, point.offset] for point in self.evidence],
            "parameters": {
                "epsilon": self.epsilon,
                "l_budget": self.l_budget,
                "gap_delta": self.gap_delta,
                "schedule": list(self.schedule),
            },
            "certificate": self.certificate.to_record() if self.certificate else None,
            "probe": self.probe,
            "rate_boundary": self.rate_boundary,
            "note": self.note,
        }


class VerificationReport(SQLModel):
    """逐点（三元组）校验证书的结果"""
    passed: bool
    worst_margin: float
    worst_triplet: tuple[int, int, int] | None = None
    samples: int
    window: int

    def to_record(self) -> dict:
        return {
            "passed": self.passed,
            "worst_margin": self.worst_margin,
            "worst_triplet": list(self.worst_triplet) if self.worst_triplet else None,
            "samples": self.samples,
            "window": self.window,
        }
