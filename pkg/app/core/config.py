import os
from pathlib import Path
from sqlmodel import SQLModel
from dotenv import load_dotenv

# 加载.env文件中的环境变量
load_dotenv()

ENV_PREFIX = "POWINST_"


class Settings(SQLModel):
    """运行默认参数，来自环境变量"""
    output_dir: Path = Path("./out")
    stride: int = 32
    epsilon: float = 1e-6
    l_budget: float = 1.0
    gap_delta: float = 1e-6
    kappa: float = 2.0
    criterion_budget: float = 5.0
    sample_count: int = 1000
    export_horizon: int = 64


def _env(name: str) -> str | None:
    value = os.getenv(ENV_PREFIX + name.upper())
    if value is None or value.strip() == "":
        return None
    return value.strip()


def get_settings() -> Settings:
    """读取环境变量，缺省项使用内置默认值"""
    overrides = {}
    for field_name in Settings.model_fields:
        value = _env(field_name)
        if value is not None:
            overrides[field_name] = value
    # 交给pydantic做类型转换
    return Settings.model_validate(overrides)
