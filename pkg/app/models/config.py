import math
from typing import Literal
from pydantic import ValidationError, field_validator, model_validator
from sqlmodel import SQLModel, Field

from app.core.errors import ConfigError
from app.models.enums import Concept, Norm, Variant

SYSTEM_KINDS = ("paper-example", "constant", "random-diagonal", "explicit")
EXTENSIONS = ("periodic", "constant-tail", "none")

# 系数值：标量、对角元列表或稠密矩阵
CoeffValue = float | list[float] | list[list[float]]


class SystemDescription(SQLModel):
    """系统描述文档（JSON）的字段约定"""
    kind: str
    label: str | None = None
    c: float | None = None
    value: CoeffValue | None = None
    representation: Literal["scalar", "diagonal", "dense"] | None = None
    dim: int | None = None
    seed: int | None = None
    log_gain_range: tuple[float, float] | None = None
    coeffs: list[CoeffValue] | None = None
    extension: Literal["periodic", "constant-tail", "none"] = "none"


class SweepSpec(SQLModel):
    """参数扫描设置：网格或二分"""
    parameter: Literal["c", "value"] = "c"
    concept: Concept = Concept.PIS
    grid: list[float] | None = None
    bisect: tuple[float, float] | None = None
    width: float = Field(default=0.05, gt=0.0)

    @model_validator(mode="after")
    def _check_mode(self):
        if self.grid is None and self.bisect is None:
            raise ValueError("需要指定 grid 或 bisect")
        if self.grid is not None and len(self.grid) == 0:
            raise ValueError("grid 不能为空")
        if self.bisect is not None and not self.bisect[0] < self.bisect[1]:
            raise ValueError("bisect 区间必须满足 lo < hi")
        return self


class AnalysisConfig(SQLModel):
    """一次分析运行的完整配置，所有字段在计算开始前校验"""
    system: str = "paper-example"
    c: float = 2.0
    value: CoeffValue = 2.0
    dim: int = Field(default=2, ge=1)
    system_seed: int = 0
    log_gain_range: tuple[float, float] = (0.0, 1.0)
    system_file: str | None = None
    label: str | None = None

    concepts: list[Concept] = Field(default_factory=lambda: list(Concept))
    variants: list[Variant] = Field(default_factory=lambda: list(Variant))
    schedule: list[int] = Field(default_factory=lambda: [32, 64, 128, 256])
    epsilon: float = Field(default=1e-6, gt=0.0)
    l_budget: float = Field(default=1.0, ge=0.0)
    gap_delta: float = Field(default=1e-6, gt=0.0)
    d_grid: list[float] | None = None
    criterion_budget: float = Field(default=5.0, ge=0.0)
    kappa: float = Field(default=2.0, gt=1.0)
    seed: int = 0
    sample_count: int = Field(default=1000, ge=1)
    norm: Norm = Norm.TWO
    stride: int = Field(default=32, ge=1)
    export_horizon: int = Field(default=64, ge=0)

    output_dir: str = "./out"
    format: Literal["json", "csv", "both"] = "both"
    timestamp: bool = True
    sweep: SweepSpec | None = None

    @field_validator("system")
    @classmethod
    def _check_system(cls, value: str) -> str:
        if value not in SYSTEM_KINDS:
            raise ValueError(f"未知系统 {value!r}，可选: {', '.join(SYSTEM_KINDS)}")
        return value

    @model_validator(mode="after")
    def _check_explicit(self):
        if self.system == "explicit" and not self.system_file:
            raise ValueError("system=explicit 时必须给出 system_file")
        return self

    @field_validator("c")
    @classmethod
    def _check_c(cls, value: float) -> float:
        if not math.isfinite(value) or value <= 0:
            raise ValueError("c 必须为正的有限数")
        return value

    @field_validator("schedule")
    @classmethod
    def _check_schedule(cls, value: list[int]) -> list[int]:
        if len(value) < 3:
            raise ValueError("窗口序列至少需要3个元素")
        if value[0] < 1 or any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("窗口序列必须为严格递增的正整数")
        return value

    @field_validator("d_grid")
    @classmethod
    def _check_d_grid(cls, value: list[float] | None) -> list[float] | None:
        if value is None:
            return value
        if not value:
            raise ValueError("d_grid 不能为空")
        if any(not math.isfinite(d) or d <= 1 for d in value):
            raise ValueError("d_grid 中每个 d 都必须大于1")
        return value

    @field_validator("log_gain_range")
    @classmethod
    def _check_range(cls, value: tuple[float, float]) -> tuple[float, float]:
        if not all(math.isfinite(v) for v in value) or value[0] > value[1]:
            raise ValueError("log_gain_range 必须是有界非空区间 [lo, hi]")
        return value

    @classmethod
    def parse(cls, data: dict) -> "AnalysisConfig":
        """校验配置字典，把pydantic错误转成按字段的配置错误"""
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            field_errors = {}
            for error in e.errors():
                field = ".".join(str(part) for part in error["loc"]) or "config"
                field_errors[field] = error["msg"]
            raise ConfigError(field_errors) from e

    def system_document(self) -> dict:
        """内置系统对应的系统描述文档"""
        document: dict = {"kind": self.system}
        if self.label:
            document["label"] = self.label
        if self.system == "paper-example":
            document["c"] = self.c
        elif self.system == "constant":
            document["value"] = self.value
        elif self.system == "random-diagonal":
            document.update(dim=self.dim, seed=self.system_seed, log_gain_range=list(self.log_gain_range))
        return document

    def with_parameter(self, parameter: str, value: float) -> "AnalysisConfig":
        """返回替换了扫描参数的配置副本"""
        return self.model_copy(update={parameter: value})
