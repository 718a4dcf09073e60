from sqlmodel import SQLModel, Field

from app.models.base import exp_or_inf
from app.models.enums import Variant


class CriterionFit(SQLModel):
    """求和判据的常数 (log D, log d, log c)"""
    variant: Variant
    logD: float = Field(ge=0.0)
    logd: float = Field(gt=0.0)
    logc: float = Field(ge=0.0)
    window: int = Field(ge=0)
    slack: float | None = None
    x_coverage: str = "exact"  # 稠密系统只对采样向量成立时为 "sampled"
    source: str = "fit"        # "fit" 或 "certificate"
    warnings: list[str] = Field(default_factory=list)

    @property
    def D(self) -> float:
        return exp_or_inf(self.logD)

    @property
    def d(self) -> float:
        return exp_or_inf(self.logd)

    @property
    def c(self) -> float:
        return exp_or_inf(self.logc)

    def to_record(self) -> dict:
        return {
            "variant": self.variant.value,
            "D": self.D,
            "d": self.d,
            "c": self.c,
            "logD": self.logD,
            "logd": self.logd,
            "logc": self.logc,
            "window": self.window,
            "slack": self.slack,
            "x_coverage": self.x_coverage,
            "source": self.source,
            "warnings": list(self.warnings),
        }


class EquivalenceReport(SQLModel):
    """一个方向上的构造性等价校验结果"""
    system: str
    variant: Variant
    direction: str  # "definition->criterion" 或 "criterion->definition"
    status: str     # "verified" / "failed" / "infeasible"
    source: dict | None = None
    constructed: dict | None = None
    margin: float | None = None
    passed: bool = False
    notes: list[str] = Field(default_factory=list)

    def to_record(self) -> dict:
        return {
            "system": self.system,
            "variant": self.variant.value,
            "direction": self.direction,
            "status": self.status,
            "source": self.source,
            "constructed": self.constructed,
            "margin": self.margin,
            "pass": self.passed,
            "notes": list(self.notes),
        }
