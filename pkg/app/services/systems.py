import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from pydantic import ValidationError

from app.core.errors import (
    InvalidParameterError, OutOfRangeError, ReportIOError, SystemParseError, UnsupportedKindError,
)
from app.models.config import SYSTEM_KINDS, SystemDescription
from app.models.enums import OperatorKind

LOG2 = math.log(2.0)


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class StepOperator:
    """单步系数算子 A(n)

    标量/对角：逐元素的对数模 log_mag 与零标记 zero（零标记为真时 log_mag 无意义）。
    稠密：规范化矩阵 matrix（最大元素绝对值在 [0.5, 1) 内）与提取出的对数尺度 log_scale，
    算子 = exp(log_scale) * matrix；零算子的 log_scale 为 -inf。
    """
    kind: OperatorKind
    dim: int
    log_mag: np.ndarray | None = None
    zero: np.ndarray | None = None
    matrix: np.ndarray | None = None
    log_scale: float = 0.0

    # ---- 构造 ----
    @classmethod
    def scalar(cls, value: float) -> "StepOperator":
        value = float(value)
        if not math.isfinite(value):
            raise InvalidParameterError(f"系数必须为有限数: {value}")
        if value == 0.0:
            return cls.scalar_log(0.0, zero=True)
        return cls.scalar_log(math.log(abs(value)))

    @classmethod
    def scalar_log(cls, log_mag: float, zero: bool = False) -> "StepOperator":
        return cls(
            kind=OperatorKind.SCALAR, dim=1,
            log_mag=_frozen(np.array([0.0 if zero else float(log_mag)])),
            zero=_frozen(np.array([bool(zero)])),
        )

    @classmethod
    def diagonal(cls, values) -> "StepOperator":
        values = np.asarray(values, dtype=float).reshape(-1)
        if values.size == 0 or not np.all(np.isfinite(values)):
            raise InvalidParameterError("对角元必须为非空的有限数列表")
        zero = values == 0.0
        with np.errstate(divide="ignore"):
            log_mag = np.where(zero, 0.0, np.log(np.abs(values)))
        return cls.diagonal_log(log_mag, zero)

    @classmethod
    def diagonal_log(cls, log_mag, zero=None) -> "StepOperator":
        log_mag = np.array(log_mag, dtype=float).reshape(-1)
        zero = np.zeros(log_mag.shape, dtype=bool) if zero is None else np.array(zero, dtype=bool).reshape(-1)
        log_mag = np.where(zero, 0.0, log_mag)
        return cls(kind=OperatorKind.DIAGONAL, dim=log_mag.size, log_mag=_frozen(log_mag), zero=_frozen(zero))

    @classmethod
    def dense(cls, matrix) -> "StepOperator":
        matrix = np.array(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.size == 0:
            raise InvalidParameterError(f"稠密系数必须是方阵，实际形状 {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            raise InvalidParameterError("稠密系数中存在非有限数")
        return cls._normalized(matrix, 0.0)

    @classmethod
    def _normalized(cls, matrix: np.ndarray, log_scale: float) -> "StepOperator":
        """按2的幂提取尺度，使最大元素绝对值落在 [0.5, 1)"""
        peak = float(np.max(np.abs(matrix)))
        if peak == 0.0 or log_scale == -math.inf:
            return cls(kind=OperatorKind.DENSE, dim=matrix.shape[0],
                       matrix=_frozen(np.zeros_like(matrix)), log_scale=-math.inf)
        _, exponent = math.frexp(peak)
        return cls(kind=OperatorKind.DENSE, dim=matrix.shape[0],
                   matrix=_frozen(np.ldexp(matrix, -exponent)),
                   log_scale=log_scale + exponent * LOG2)

    @classmethod
    def identity(cls, kind: OperatorKind, dim: int) -> "StepOperator":
        if kind == OperatorKind.SCALAR:
            return cls.scalar_log(0.0)
        if kind == OperatorKind.DIAGONAL:
            return cls.diagonal_log(np.zeros(dim))
        return cls._normalized(np.eye(dim), 0.0)

    # ---- 运算 ----
    @property
    def is_zero(self) -> bool:
        if self.kind == OperatorKind.DENSE:
            return self.log_scale == -math.inf
        return bool(np.any(self.zero)) if self.kind == OperatorKind.SCALAR else bool(np.all(self.zero))

    def log_entries(self) -> np.ndarray:
        """标量/对角的逐元素对数模，零元素为 -inf"""
        if self.kind == OperatorKind.DENSE:
            raise InvalidParameterError("稠密算子没有逐元素对数模")
        return np.where(self.zero, -math.inf, self.log_mag)

    def compose(self, right: "StepOperator") -> "StepOperator":
        """返回 self · right（先作用 right）"""
        if self.kind != right.kind or self.dim != right.dim:
            raise InvalidParameterError("只能复合同类型同维数的算子")
        if self.kind == OperatorKind.DENSE:
            if self.is_zero or right.is_zero:
                return StepOperator._normalized(np.zeros((self.dim, self.dim)), -math.inf)
            return StepOperator._normalized(self.matrix @ right.matrix, self.log_scale + right.log_scale)
        zero = self.zero | right.zero
        return StepOperator(kind=self.kind, dim=self.dim,
                            log_mag=_frozen(np.where(zero, 0.0, self.log_mag + right.log_mag)),
                            zero=_frozen(zero))

    def to_matrix(self) -> np.ndarray:
        """重建普通浮点矩阵（数值可能溢出，仅用于小规模检查与导出）"""
        if self.kind == OperatorKind.DENSE:
            if self.is_zero:
                return np.zeros((self.dim, self.dim))
            return self.matrix * math.exp(self.log_scale)
        values = np.where(self.zero, 0.0, np.exp(self.log_mag))
        return np.diag(values)

    def same_as(self, other: "StepOperator") -> bool:
        """逐位比较两个算子的表示"""
        if self.kind != other.kind or self.dim != other.dim:
            return False
        if self.kind == OperatorKind.DENSE:
            return (self.log_scale == other.log_scale
                    and np.array_equal(self.matrix, other.matrix))
        return np.array_equal(self.zero, other.zero) and np.array_equal(self.log_mag, other.log_mag)


@dataclass(frozen=True, eq=False)
class OperatorSeq:
    """系数序列 A: N -> B(R^dim)，构造后不可变"""
    kind: OperatorKind
    dim: int
    rule: Callable[[int], StepOperator] = field(repr=False)
    label: str
    description: dict = field(default_factory=dict)

    def coeff_at(self, n: int) -> StepOperator:
        if isinstance(n, bool) or int(n) != n or n < 0:
            raise InvalidParameterError(f"下标必须为非负整数: {n}")
        return self.rule(int(n))

    def steps(self, start: int, stop: int) -> list[StepOperator]:
        """A(start), ..., A(stop-1)"""
        return [self.coeff_at(n) for n in range(start, stop)]

    def log_magnitudes(self, start: int, stop: int) -> tuple[np.ndarray, np.ndarray]:
        """标量/对角系统在 [start, stop) 上的对数模与零标记，形状 (dim, stop-start)"""
        if self.kind == OperatorKind.DENSE:
            raise InvalidParameterError("稠密系统没有逐元素对数模")
        count = max(stop - start, 0)
        log_mag = np.zeros((self.dim, count))
        zero = np.zeros((self.dim, count), dtype=bool)
        for j, n in enumerate(range(start, stop)):
            op = self.coeff_at(n)
            log_mag[:, j] = op.log_mag
            zero[:, j] = op.zero
        return log_mag, zero


def max_step_gain(system: OperatorSeq, horizon: int) -> float:
    """步 1..horizon 中最大的 log ‖A(n)‖（稠密取二范数）"""
    best = -math.inf
    for op in system.steps(1, horizon + 1):
        if op.is_zero:
            continue
        if op.kind == OperatorKind.DENSE:
            gain = op.log_scale + math.log(float(np.linalg.norm(op.matrix, ord=2)))
        else:
            gain = float(np.max(op.log_entries()))
        best = max(best, gain)
    return best


def _check_positive_finite(name: str, value: float) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InvalidParameterError(f"{name} 必须是实数")
    value = float(value)
    if not math.isfinite(value) or value <= 0:
        raise InvalidParameterError(f"{name} 必须为正的有限数，实际为 {value}")
    return value


def make_paper_example(c: float) -> OperatorSeq:
    """示例系统 A(n) = c·a_n，a_n = 2^{-n}（n 偶）或 2^{n+1}（n 奇），在对数域中求值"""
    c = _check_positive_finite("c", c)
    log_c = math.log(c)

    def rule(n: int) -> StepOperator:
        if n % 2 == 0:
            return StepOperator.scalar_log(log_c - n * LOG2)
        return StepOperator.scalar_log(log_c + (n + 1) * LOG2)

    return OperatorSeq(kind=OperatorKind.SCALAR, dim=1, rule=rule,
                       label=f"paper-example(c={c:g})",
                       description={"kind": "paper-example", "c": c})


def make_constant(op: StepOperator, dim: int, label: str | None = None) -> OperatorSeq:
    """常系数系统 A(n) = op"""
    if op.dim != dim:
        raise InvalidParameterError(f"算子维数 {op.dim} 与声明维数 {dim} 不一致")
    return OperatorSeq(kind=op.kind, dim=dim, rule=lambda n: op,
                       label=label or f"constant({op.kind.value}, dim={dim})",
                       description={"kind": "constant", "representation": op.kind.value})


def make_random_diagonal(dim: int, seed: int, log_gain_range: tuple[float, float]) -> OperatorSeq:
    """对角系数的对数模在区间上均匀分布，由 (seed, n) 决定，与调用顺序无关"""
    if isinstance(dim, bool) or int(dim) != dim or dim < 1:
        raise InvalidParameterError(f"dim 必须为正整数: {dim}")
    if isinstance(seed, bool) or int(seed) != seed or seed < 0:
        raise InvalidParameterError(f"seed 必须为非负整数: {seed}")
    lo, hi = (float(v) for v in log_gain_range)
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
        raise InvalidParameterError(f"log_gain_range 必须是有界非空区间，实际为 [{lo}, {hi}]")
    dim, seed = int(dim), int(seed)

    def rule(n: int) -> StepOperator:
        rng = np.random.default_rng([seed, n])
        return StepOperator.diagonal_log(rng.uniform(lo, hi, size=dim))

    return OperatorSeq(kind=OperatorKind.DIAGONAL, dim=dim, rule=rule,
                       label=f"random-diagonal(dim={dim}, seed={seed})",
                       description={"kind": "random-diagonal", "dim": dim, "seed": seed,
                                    "log_gain_range": [lo, hi]})


def _operator_from_value(value, representation: str | None) -> StepOperator:
    """把文档中的系数值转换成算子：数 -> 标量，一维列表 -> 对角，二维列表 -> 稠密"""
    if isinstance(value, (int, float)):
        inferred = "scalar"
    elif isinstance(value, list) and value and all(isinstance(v, list) for v in value):
        inferred = "dense"
    elif isinstance(value, list) and value:
        inferred = "diagonal"
    else:
        raise SystemParseError(f"无法识别的系数值: {value!r}")
    representation = representation or inferred
    if representation == "scalar" and inferred == "scalar":
        return StepOperator.scalar(value)
    if representation == "diagonal" and inferred in ("scalar", "diagonal"):
        return StepOperator.diagonal(value if isinstance(value, list) else [value])
    if representation == "dense" and inferred == "dense":
        return StepOperator.dense(value)
    raise SystemParseError(f"系数值 {value!r} 与 representation={representation!r} 不符")


def load_system_document(document: dict) -> OperatorSeq:
    """根据已解析的系统描述文档构造系数序列"""
    if not isinstance(document, dict):
        raise SystemParseError("系统描述文档必须是JSON对象")
    kind = document.get("kind")
    if kind not in SYSTEM_KINDS:
        raise UnsupportedKindError(f"不支持的系统类型 kind={kind!r}，可选: {', '.join(SYSTEM_KINDS)}")
    try:
        spec = SystemDescription.model_validate(document)
    except ValidationError as e:
        fields = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
        raise SystemParseError(f"系统描述字段错误: {fields}") from e

    try:
        if kind == "paper-example":
            if spec.c is None:
                raise SystemParseError("paper-example 需要字段 c")
            system = make_paper_example(spec.c)
        elif kind == "constant":
            if spec.value is None:
                raise SystemParseError("constant 需要字段 value")
            op = _operator_from_value(spec.value, spec.representation)
            system = make_constant(op, op.dim, label=f"constant({spec.value})")
        elif kind == "random-diagonal":
            if spec.dim is None or spec.seed is None or spec.log_gain_range is None:
                raise SystemParseError("random-diagonal 需要字段 dim, seed, log_gain_range")
            system = make_random_diagonal(spec.dim, spec.seed, spec.log_gain_range)
        else:
            system = _explicit_system(spec)
    except InvalidParameterError as e:
        raise SystemParseError(str(e)) from e

    return OperatorSeq(kind=system.kind, dim=system.dim, rule=system.rule,
                       label=spec.label or system.label,
                       description=spec.model_dump(exclude_none=True))


def _explicit_system(spec: SystemDescription) -> OperatorSeq:
    if not spec.coeffs:
        raise SystemParseError("explicit 需要非空的 coeffs 列表")
    ops = [_operator_from_value(value, spec.representation) for value in spec.coeffs]
    kind, dim = ops[0].kind, ops[0].dim
    if any(op.kind != kind or op.dim != dim for op in ops):
        raise SystemParseError("coeffs 中所有系数的类型与维数必须一致")
    count = len(ops)
    extension = spec.extension

    def rule(n: int) -> StepOperator:
        if n < count:
            return ops[n]
        if extension == "periodic":
            return ops[n % count]
        if extension == "constant-tail":
            return ops[-1]
        raise OutOfRangeError(f"下标 {n} 超出显式系数列表长度 {count}，且未声明延拓规则")

    return OperatorSeq(kind=kind, dim=dim, rule=rule, label=f"explicit({count} coeffs, {extension})")


def load_system(source: str) -> OperatorSeq:
    """解析JSON格式的系统描述文档"""
    try:
        document = json.loads(source)
    except json.JSONDecodeError as e:
        raise SystemParseError(f"JSON格式错误: {e.msg}", line=e.lineno, column=e.colno) from e
    return load_system_document(document)


def load_system_file(path: str | Path) -> OperatorSeq:
    """从文件读取系统描述文档"""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ReportIOError(f"读取系统描述文件 {path} 失败: {e}") from e
    return load_system(text)
