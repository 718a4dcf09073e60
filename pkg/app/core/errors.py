class PowerInstabilityError(Exception):
    """本项目所有异常的基类"""


class InvalidParameterError(PowerInstabilityError, ValueError):
    """参数超出运算的前置条件"""


class DomainError(PowerInstabilityError, ValueError):
    """指标对 (m, n) 不在 Δ = {m >= n >= 0} 内"""

    def __init__(self, m: int, n: int):
        super().__init__(f"指标对 (m={m}, n={n}) 不满足 m >= n >= 0")
        self.m = m
        self.n = n


class UnsupportedCombinationError(PowerInstabilityError, ValueError):
    """表示方式与范数的组合不受支持"""


class UnsupportedKindError(PowerInstabilityError, ValueError):
    """系统描述文档中的 kind 未知"""


class OutOfRangeError(PowerInstabilityError, IndexError):
    """显式系数列表没有延拓规则，且下标越界"""


class SystemParseError(PowerInstabilityError, ValueError):
    """系统描述文档格式错误"""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        location = f" (第{line}行, 第{column}列)" if line is not None else ""
        super().__init__(f"{message}{location}")
        self.line = line
        self.column = column


class ConfigError(PowerInstabilityError, ValueError):
    """分析配置校验失败，按字段给出错误信息"""

    def __init__(self, field_errors: dict[str, str]):
        lines = [f"{field}: {message}" for field, message in field_errors.items()]
        super().__init__("配置错误:\n  " + "\n  ".join(lines))
        self.field_errors = field_errors


class ReportIOError(PowerInstabilityError, OSError):
    """读写配置或报告文件失败"""
