import math
from datetime import datetime, timezone as tz
from sqlmodel import SQLModel, Field


def exp_or_inf(value: float) -> float:
    """exp(value)，超出双精度范围时返回 inf"""
    try:
        return math.exp(value)
    except OverflowError:
        return math.inf


class TimestampMixin(SQLModel):
    """报告类模型的基类，包含生成时间（可关闭以获得逐字节可复现的报告）"""
    generated_at: datetime | None = Field(default_factory=lambda: datetime.now(tz.utc))
