import math
import threading
from pathlib import Path
from typing import Iterator

import numpy as np
import pandas as pd
from scipy.linalg import svdvals
from scipy.special import logsumexp

from app.core.errors import DomainError, InvalidParameterError, ReportIOError, UnsupportedCombinationError
from app.models.enums import Norm, OperatorKind
from app.models.reports import GrowthSummary
from app.services.systems import LOG2, OperatorSeq, StepOperator


def _check_pair(m: int, n: int) -> tuple[int, int]:
    if int(m) != m or int(n) != n:
        raise InvalidParameterError(f"下标必须为整数: (m={m}, n={n})")
    m, n = int(m), int(n)
    if n < 0 or m < n:
        raise DomainError(m, n)
    return m, n


class TransitionCache:
    """转移算子 A_m^n = A(m)···A(n+1) 的缓存

    标量/对角系统保存对数模的前缀和，任意 (m, n) 都是两个前缀之差；
    稠密系统保存检查点之间的分块乘积 A_{(j+1)k}^{jk}，查询时从 A(n+1) 起自左向右累乘，
    分块固定，所以结果与查询顺序无关。需要更长的区间时自动扩展。
    """

    def __init__(self, system: OperatorSeq, horizon: int = 0, stride: int = 32):
        if stride < 1:
            raise InvalidParameterError(f"stride 必须为正整数: {stride}")
        self.system = system
        self.stride = int(stride)
        self.horizon = -1
        self._lock = threading.Lock()
        # 标量/对角
        self._prefix = np.zeros((system.dim, 0))
        self._zeros = np.zeros((system.dim, 0), dtype=np.int64)
        # 稠密
        self._steps: list[StepOperator] = []
        self._blocks: list[StepOperator] = []
        self._inverses: list[StepOperator | None] = []
        self.extend(max(int(horizon), 0))

    @property
    def is_dense(self) -> bool:
        return self.system.kind == OperatorKind.DENSE

    def extend(self, horizon: int) -> None:
        """保证 [0, horizon] 内的步都已缓存"""
        if horizon <= self.horizon:
            return
        with self._lock:
            if horizon <= self.horizon:
                return
            start = self.horizon + 1
            if self.is_dense:
                self._extend_dense(start, horizon)
            else:
                self._extend_prefix(start, horizon)
            self.horizon = horizon

    def _extend_prefix(self, start: int, horizon: int) -> None:
        log_mag, zero = self.system.log_magnitudes(start, horizon + 1)
        if start == 0:
            # A(0) 不进入任何乘积
            log_mag[:, 0] = 0.0
            zero[:, 0] = False
            base_sum = np.zeros(self.system.dim)
            base_zero = np.zeros(self.system.dim, dtype=np.int64)
        else:
            base_sum = self._prefix[:, -1]
            base_zero = self._zeros[:, -1]
        log_mag = np.where(zero, 0.0, log_mag)
        prefix = base_sum[:, None] + np.cumsum(log_mag, axis=1)
        zeros = base_zero[:, None] + np.cumsum(zero.astype(np.int64), axis=1)
        self._prefix = np.concatenate([self._prefix, prefix], axis=1)
        self._zeros = np.concatenate([self._zeros, zeros], axis=1)

    def _extend_dense(self, start: int, horizon: int) -> None:
        self._steps.extend(self.system.steps(start, horizon + 1))
        self._inverses.extend([None] * (horizon + 1 - start))
        for j in range(start, horizon + 1):
            self._inverses[j] = _inverse_step(self._steps[j])
        k = self.stride
        while (len(self._blocks) + 1) * k <= horizon:
            lo = len(self._blocks) * k
            self._blocks.append(self._accumulate(lo, lo + k))

    def _accumulate(self, n: int, m: int) -> StepOperator:
        """逐步累乘 A(m)···A(n+1)"""
        op = StepOperator.identity(self.system.kind, self.system.dim)
        for j in range(n + 1, m + 1):
            op = self._steps[j].compose(op)
        return op

    # ---- 查询 ----
    def transition(self, m: int, n: int) -> StepOperator:
        m, n = _check_pair(m, n)
        self.extend(m)
        if not self.is_dense:
            zero = (self._zeros[:, m] - self._zeros[:, n]) > 0
            log_mag = self._prefix[:, m] - self._prefix[:, n]
            if self.system.kind == OperatorKind.SCALAR:
                return StepOperator.scalar_log(float(log_mag[0]), zero=bool(zero[0]))
            return StepOperator.diagonal_log(log_mag, zero)

        k = self.stride
        first = -(-n // k) * k  # n 之后最近的检查点
        last = (m // k) * k
        if last - first < k:
            return self._accumulate(n, m)
        op = self._accumulate(n, first)
        for j in range(first // k, last // k):
            op = self._blocks[j].compose(op)
        for j in range(last + 1, m + 1):
            op = self._steps[j].compose(op)
        return op

    def step(self, n: int) -> StepOperator:
        self.extend(n)
        return self._steps[n] if self.is_dense else self.system.coeff_at(n)

    def inverse_step(self, n: int) -> StepOperator | None:
        """稠密步 A(n) 的逆（规范化形式），奇异时为 None"""
        self.extend(n)
        return self._inverses[n]

    def log_prefix(self, horizon: int) -> tuple[np.ndarray, np.ndarray]:
        """标量/对角系统的前缀对数和与零计数，形状 (dim, horizon+1)"""
        if self.is_dense:
            raise InvalidParameterError("稠密系统没有前缀形式")
        self.extend(horizon)
        return self._prefix[:, :horizon + 1].copy(), self._zeros[:, :horizon + 1].copy()


def _inverse_step(op: StepOperator) -> StepOperator | None:
    if op.is_zero or np.linalg.matrix_rank(op.matrix) < op.dim:
        return None
    inverse = np.linalg.inv(op.matrix)
    return StepOperator._normalized(inverse, -op.log_scale)


def _log_sigma_max(op: StepOperator) -> float:
    return op.log_scale + math.log(float(svdvals(op.matrix)[0]))


def log_vector_norms(log_abs: np.ndarray, norm: Norm) -> np.ndarray:
    """由各分量的对数绝对值（按列）求向量范数的对数，分量为 -inf 表示 0"""
    norm = Norm(norm)
    with np.errstate(divide="ignore", invalid="ignore"):
        if norm == Norm.ONE:
            return logsumexp(log_abs, axis=0)
        if norm == Norm.TWO:
            return 0.5 * logsumexp(2.0 * log_abs, axis=0)
        return np.max(log_abs, axis=0)


def log_image_norms(cache: TransitionCache, m: int, n: int, vectors: np.ndarray,
                    norm: Norm = Norm.TWO) -> np.ndarray:
    """log ‖A_m^n x‖，vectors 的每一列是一个 x"""
    op = cache.transition(m, n)
    if op.kind == OperatorKind.DENSE:
        if op.is_zero:
            return np.full(vectors.shape[1], -np.inf)
        return op.log_scale + log_vector_norms(_log_abs(op.matrix @ vectors), norm)
    scaled = np.where(op.zero[:, None], -np.inf, op.log_mag[:, None] + _log_abs(vectors))
    return log_vector_norms(scaled, norm)


def forward_log_norms(cache: TransitionCache, n: int, m: int, x: np.ndarray, norm: Norm = Norm.TWO) -> np.ndarray:
    """log ‖A_k^n x‖，k = n..m；稠密系统逐步前推并提取尺度"""
    m, n = _check_pair(m, n)
    x = np.asarray(x, dtype=float).reshape(-1)
    cache.extend(m)
    if not cache.is_dense:
        prefix, zeros = cache._prefix[:, n:m + 1], cache._zeros[:, n:m + 1]
        log_abs = np.where((zeros - zeros[:, :1]) > 0, -np.inf,
                           prefix - prefix[:, :1] + _log_abs(x)[:, None])
        return log_vector_norms(log_abs, norm)

    result = np.empty(m - n + 1)
    vector, log_scale = x.copy(), 0.0
    result[0] = log_vector_norms(_log_abs(vector)[:, None], norm)[0]
    for j, k in enumerate(range(n + 1, m + 1), start=1):
        step = cache.step(k)
        if step.is_zero or log_scale == -math.inf:
            result[j:] = -np.inf
            break
        vector = step.matrix @ vector
        log_scale += step.log_scale
        peak = float(np.max(np.abs(vector)))
        if peak == 0.0:
            result[j:] = -np.inf
            break
        _, exponent = math.frexp(peak)
        vector = np.ldexp(vector, -exponent)
        log_scale += exponent * LOG2
        result[j] = log_scale + log_vector_norms(_log_abs(vector)[:, None], norm)[0]
    return result


def _log_abs(values: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.abs(values))


def transition(cache: TransitionCache, m: int, n: int) -> StepOperator:
    return cache.transition(m, n)


def min_gain(cache: TransitionCache, m: int, n: int, norm: Norm = Norm.TWO) -> float:
    """log γ(m, n)：单位向量在 A_m^n 下的最小增益（对数）"""
    norm = Norm(norm)
    m, n = _check_pair(m, n)
    if not cache.is_dense:
        op = cache.transition(m, n)
        # 标量/对角在三种范数下一致
        return float(np.min(op.log_entries()))
    if norm != Norm.TWO:
        raise UnsupportedCombinationError(f"稠密系统只支持二范数的最小增益，收到 norm={norm.value}")
    if m == n:
        return 0.0
    # σ_min(P) = 1 / ‖P^{-1}‖，P^{-1} = A(n+1)^{-1}···A(m)^{-1}
    inverse = StepOperator.identity(OperatorKind.DENSE, cache.system.dim)
    for j in range(n + 1, m + 1):
        step_inverse = cache.inverse_step(j)
        if step_inverse is None:
            return -math.inf
        inverse = inverse.compose(step_inverse)
    return -_log_sigma_max(inverse)


class GrowthTable:
    """窗口 [0, M] 上 g(m, n) = log γ(m, n) 的三角表

    separable: 标量/对角系统，g(m, n) = min_i (P_i[m] - P_i[n])，只保存前缀，内存 O(M·dim)；
    grid: 稠密系统，保存 (M+1)×(M+1) 数组，上三角为 NaN。
    """

    def __init__(self, horizon: int, norm: Norm, kind: str,
                 grid: np.ndarray | None = None,
                 prefix: np.ndarray | None = None,
                 zeros: np.ndarray | None = None):
        self.horizon = horizon
        self.norm = Norm(norm)
        self.kind = kind
        self.grid = grid
        self.prefix = prefix
        self.zeros = zeros
        self.gain_kind = "exact"

    @property
    def entries(self) -> int:
        return (self.horizon + 1) * (self.horizon + 2) // 2

    @property
    def has_singular(self) -> bool:
        """窗口内是否存在 g = -inf"""
        if self.kind == "separable":
            return bool(np.any(self.zeros[:, self.horizon] > 0))
        return bool(np.any(np.isneginf(self.grid)))

    def value(self, m: int, n: int) -> float:
        m, n = _check_pair(m, n)
        if m > self.horizon:
            raise InvalidParameterError(f"m={m} 超出窗口 M={self.horizon}")
        if self.kind == "grid":
            return float(self.grid[m, n])
        if np.any(self.zeros[:, m] - self.zeros[:, n] > 0):
            return -math.inf
        return float(np.min(self.prefix[:, m] - self.prefix[:, n]))

    def first_column(self) -> np.ndarray:
        """g(m, 0)，m = 0..M"""
        if self.kind == "grid":
            return self.grid[:, 0].copy()
        singular = np.any(self.zeros > self.zeros[:, :1], axis=0)
        return np.where(singular, -np.inf, np.min(self.prefix - self.prefix[:, :1], axis=0))

    def restrict(self, horizon: int) -> "GrowthTable":
        """截取较小窗口"""
        if horizon < 0 or horizon > self.horizon:
            raise InvalidParameterError(f"窗口 {horizon} 不在 [0, {self.horizon}] 内")
        if self.kind == "grid":
            return GrowthTable(horizon, self.norm, "grid", grid=self.grid[:horizon + 1, :horizon + 1])
        return GrowthTable(horizon, self.norm, "separable",
                           prefix=self.prefix[:, :horizon + 1], zeros=self.zeros[:, :horizon + 1])

    def iter_rows(self, chunk: int = 128, start: int = 0) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """按行块遍历所有 (m, n, g)，m 从 start 开始，顺序为字典序"""
        for lo in range(start, self.horizon + 1, chunk):
            hi = min(lo + chunk, self.horizon + 1)
            m_idx = np.arange(lo, hi)
            n_idx = np.arange(hi)
            mask = n_idx[None, :] <= m_idx[:, None]
            if self.kind == "grid":
                block = self.grid[lo:hi, :hi]
            else:
                diff = self.prefix[:, lo:hi, None] - self.prefix[:, None, :hi]
                singular = np.any((self.zeros[:, lo:hi, None] - self.zeros[:, None, :hi]) > 0, axis=0)
                block = np.where(singular, -np.inf, np.min(diff, axis=0))
            mm, nn = np.nonzero(mask)
            yield m_idx[mm], n_idx[nn], block[mm, nn]

    def to_frame(self) -> pd.DataFrame:
        parts = list(self.iter_rows())
        return pd.DataFrame({
            "m": np.concatenate([p[0] for p in parts]),
            "n": np.concatenate([p[1] for p in parts]),
            "g": np.concatenate([p[2] for p in parts]),
        })

    def to_csv(self, path: str | Path) -> Path:
        """导出为 m,n,g 三列的CSV，g 保留17位有效数字"""
        path = Path(path)
        try:
            self.to_frame().to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
        except OSError as e:
            raise ReportIOError(f"写入增长表 {path} 失败: {e}") from e
        return path

    def summary(self) -> GrowthSummary:
        g_min, g_max, abs_max, neg_inf = math.inf, -math.inf, 0.0, 0
        for _, _, g in self.iter_rows(chunk=64):
            finite = g[np.isfinite(g)]
            neg_inf += int(np.count_nonzero(np.isneginf(g)))
            if finite.size:
                g_min = min(g_min, float(finite.min()))
                g_max = max(g_max, float(finite.max()))
                abs_max = max(abs_max, float(np.abs(finite).max()))
        if neg_inf:
            g_min = -math.inf
        return GrowthSummary(horizon=self.horizon, norm=self.norm, entries=self.entries,
                             g_min=g_min, g_max=g_max, abs_max=abs_max, neg_inf_entries=neg_inf)


def growth_table(cache: TransitionCache, M: int, norm: Norm = Norm.TWO) -> GrowthTable:
    """计算窗口 [0, M] 上全部 g(m, n)"""
    norm = Norm(norm)
    if int(M) != M or M < 0:
        raise InvalidParameterError(f"窗口 M 必须为非负整数: {M}")
    M = int(M)
    if not cache.is_dense:
        prefix, zeros = cache.log_prefix(M)
        return GrowthTable(M, norm, "separable", prefix=prefix, zeros=zeros)
    if norm != Norm.TWO:
        raise UnsupportedCombinationError(f"稠密系统只支持二范数的最小增益，收到 norm={norm.value}")

    cache.extend(M)
    dim = cache.system.dim
    grid = np.full((M + 1, M + 1), np.nan)
    np.fill_diagonal(grid, 0.0)
    # 每一行 n 固定，逆乘积向右延伸一步即得到下一个 m
    for n in range(M + 1):
        inverse = StepOperator.identity(OperatorKind.DENSE, dim)
        for m in range(n + 1, M + 1):
            step_inverse = cache.inverse_step(m)
            if step_inverse is None:
                grid[m:, n] = -np.inf
                break
            inverse = inverse.compose(step_inverse)
            grid[m, n] = -_log_sigma_max(inverse)
    return GrowthTable(M, norm, "grid", grid=grid)


def paper_example_closed_form(c: float, m: int, n: int) -> float:
    """示例系统 A_m^n 的对数模：(m-n)·log c + log a_{mn}"""
    m, n = _check_pair(m, n)
    if c <= 0 or not math.isfinite(c):
        raise InvalidParameterError(f"c 必须为正的有限数: {c}")
    if m == n:
        return 0.0
    if m % 2 == 0 and n % 2 == 0:
        log_a = 0.0
    elif m % 2 == 0:
        log_a = -(n + 1) * LOG2
    elif n % 2 == 0:
        log_a = (m + 1) * LOG2
    else:
        log_a = (m - n) * LOG2
    return (m - n) * math.log(c) + log_a


PARITY_CASES = ("even-even", "even-odd", "odd-even", "odd-odd")


def paper_example_case_offsets(c: float, a: float, b: float, M: int) -> dict[str, float]:
    """按 (m, n) 奇偶四种情形，分别给出 max [a(m-n) - b n - log|A_m^n|]

    用闭式表达式逐对计算，m > n；用于说明哪一种情形决定所需的偏移量。
    """
    if M < 1:
        raise InvalidParameterError(f"窗口 M 必须至少为1: {M}")
    m_idx, n_idx = np.tril_indices(M + 1, k=-1)
    log_c = math.log(c)
    m_even, n_even = m_idx % 2 == 0, n_idx % 2 == 0
    log_a = np.select(
        [m_even & n_even, m_even & ~n_even, ~m_even & n_even],
        [np.zeros(m_idx.shape), -(n_idx + 1) * LOG2, (m_idx + 1) * LOG2],
        default=(m_idx - n_idx) * LOG2,
    )
    offsets = a * (m_idx - n_idx) - b * n_idx - ((m_idx - n_idx) * log_c + log_a)
    result = {}
    for name, mask in zip(PARITY_CASES, (m_even & n_even, m_even & ~n_even, ~m_even & n_even, ~m_even & ~n_even)):
        result[name] = float(offsets[mask].max()) if np.any(mask) else -math.inf
    return result
