import math
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from app.core.errors import InvalidParameterError
from app.models.certificates import Certificate, Classification, EvidencePoint, VerificationReport
from app.models.enums import Concept, Norm, OperatorKind, Verdict
from app.services.systems import OperatorSeq
from app.services.transition import GrowthTable, TransitionCache, growth_table, log_image_norms

DEFAULT_SCHEDULE = (32, 64, 128, 256)
DEFAULT_EPSILON = 1e-6
DEFAULT_L_BUDGET = 1.0
DEFAULT_GAP_DELTA = 1e-6

RATE_TOL = 1e-12       # 速率不大于此值视为不可行
BOUNDARY_TOL = 1e-9    # |速率| 不大于此值标记为 a = 0 边界
CHECK_TOL = 1e-9       # 逐点校验的松弛量
RANDOM_DIRECTIONS = 2  # 稠密系统每个三元组额外采样的随机方向数


def _proper_pairs(table: GrowthTable, chunk: int = 128) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """窗口内 m > n 的 (m, n, g)"""
    for m, n, g in table.iter_rows(chunk):
        keep = m > n
        yield m[keep].astype(float), n[keep].astype(float), g[keep]


def _max_raw_offset(table: GrowthTable, a: float, b: float) -> float:
    """max over 窗口内所有 (m, n) 的 a(m-n) - b·n - g(m, n)；b = inf 时只看 n = 0"""
    if table.has_singular:
        return math.inf
    if b == math.inf:
        column = table.first_column()
        return float(np.max(a * np.arange(table.horizon + 1) - column))
    if table.kind == "separable":
        # a m - P_i[m] + max_{n<=m} (P_i[n] - (a+b) n)，逐元素取最大
        steps = np.arange(table.horizon + 1, dtype=float)
        upper = a * steps - table.prefix
        lower = np.maximum.accumulate(table.prefix - (a + b) * steps, axis=1)
        return float(np.max(upper + lower))
    best = -math.inf
    for m, n, g in table.iter_rows():
        best = max(best, float(np.max(a * (m - n) - b * n - g)))
    return best


def _check_rates(a: float, b: float) -> None:
    if not (a > 0) or math.isnan(a) or math.isinf(a):
        raise InvalidParameterError(f"速率 a 必须为正的有限数: {a}")
    if not (b >= 0):
        raise InvalidParameterError(f"退化率 b 必须非负: {b}")


def required_offset(table: GrowthTable, a: float, b: float) -> float:
    """L*(M; a, b) = max(0, max [a(m-n) - b·n - g(m, n)])，窗口内有 g = -inf 时为 +inf"""
    _check_rates(a, b)
    return max(0.0, _max_raw_offset(table, a, b))


def _permissive_b(concept: Concept, a: float, gap_delta: float) -> float:
    if concept == Concept.UPIS:
        return 0.0
    if concept == Concept.SPIS:
        return a - gap_delta
    return math.inf


@dataclass
class FitOutcome:
    """两阶段拟合的中间结果，certificate 为 None 表示不可行"""
    rate: float
    certificate: Certificate | None
    reason: str = ""

    @property
    def rate_boundary(self) -> bool:
        return abs(self.rate) <= BOUNDARY_TOL


def _rate_stage(table: GrowthTable, concept: Concept, l_budget: float, gap_delta: float) -> float:
    """第一阶段：b 取最宽松值时的最大窗口稳健速率 min (β + L)/α - L/M

    SPIS 的约束为 a(m - 2n) <= g - δn + L：α < 0 的对给出 a 的下界，α = 0 的对要求 β + L >= 0。
    上下界矛盾时返回 -inf。
    """
    M = table.horizon
    if concept == Concept.PIS:
        column = table.first_column()[1:]
        return float(np.min((column + l_budget) / np.arange(1, M + 1))) - l_budget / M
    upper, lower = math.inf, -math.inf
    for m, n, g in _proper_pairs(table):
        if concept == Concept.UPIS:
            alpha, beta = m - n, g
        else:
            alpha, beta = m - 2 * n, g - gap_delta * n
        bound = beta + l_budget
        rising = alpha > 0
        if np.any(rising):
            upper = min(upper, float(np.min(bound[rising] / alpha[rising])))
        falling = alpha < 0
        if np.any(falling):
            lower = max(lower, float(np.max(bound[falling] / alpha[falling])))
        if np.any((alpha == 0) & (bound < 0)):
            return -math.inf
    if lower > upper:
        return -math.inf
    return max(upper - l_budget / M, lower)


def _degradation_stage(table: GrowthTable, a: float, b_max: float, l_budget: float) -> tuple[float, float] | None:
    """第二阶段：a 固定，在 b ∈ [0, b_max]、L ∈ [0, l_budget] 上最小化 b + L/K，再取最小 L

    约束写成 c_p <= L + b·n_p，c_p = a(m-n) - g(m, n)。
    """
    M = table.horizon
    K = M - 1
    if M == 1:
        offset = max(0.0, a - table.value(1, 0))
        return (offset, 0.0) if offset <= l_budget else None

    c_top = a - table.value(M, K)
    low = threshold = cap = 0.0
    for m, n, g in _proper_pairs(table):
        c = a * (m - n) - g
        first = n == 0
        if np.any(first):
            low = max(low, float(np.max(c[first])))
        inner = (n > 0) & (n < K)
        if np.any(inner):
            ci, ni = c[inner], n[inner]
            t = np.where(ci <= c_top, (K * ci - ni * c_top) / (K - ni), ci)
            threshold = max(threshold, float(np.max(t)))
        if math.isfinite(b_max):
            cap = max(cap, float(np.max(c - n * b_max)))
    # b + L/K 随 L 不增，超出预算时取 L = l_budget，由 b 补足
    floor = max(low, cap)
    if floor > l_budget + RATE_TOL * max(1.0, l_budget):
        return None
    L = min(max(floor, threshold), l_budget)

    b = 0.0
    for m, n, g in _proper_pairs(table):
        later = n > 0
        if np.any(later):
            c = a * (m[later] - n[later]) - g[later]
            b = max(b, float(np.max((c - L) / n[later])))
    return L, min(b, b_max)


def _fit(table: GrowthTable, concept: Concept, l_budget: float, gap_delta: float) -> FitOutcome:
    concept = Concept(concept)
    if table.horizon < 1:
        raise InvalidParameterError("增长表窗口至少需要 M >= 1 才能拟合证书")
    if l_budget < 0 or not math.isfinite(l_budget):
        raise InvalidParameterError(f"L_budget 必须为非负有限数: {l_budget}")
    if not gap_delta > 0:
        raise InvalidParameterError(f"gap_delta 必须为正: {gap_delta}")
    if table.has_singular:
        return FitOutcome(rate=-math.inf, certificate=None, reason="窗口内存在奇异乘积")

    rate = _rate_stage(table, concept, l_budget, gap_delta)
    if rate <= RATE_TOL or (concept == Concept.SPIS and rate <= gap_delta):
        return FitOutcome(rate=rate, certificate=None, reason=f"没有正的速率满足窗口约束 (a*={rate:.6g})")

    stage = _degradation_stage(table, rate, _permissive_b(concept, rate, gap_delta), l_budget)
    if stage is None:
        return FitOutcome(rate=rate, certificate=None, reason="在 L_budget 内找不到满足约束的 (b, L)")
    L, b = stage
    raw = _max_raw_offset(table, rate, b)
    L = max(L, raw, 0.0)
    certificate = Certificate(
        concept=concept, L=L, a=rate, b=b, window=table.horizon, slack=L - raw,
        norm=table.norm, rate_boundary=abs(rate) <= BOUNDARY_TOL,
    )
    return FitOutcome(rate=rate, certificate=certificate)


def fit_certificate(table: GrowthTable, concept: Concept, L_budget: float = DEFAULT_L_BUDGET,
                    gap_delta: float = DEFAULT_GAP_DELTA) -> Certificate | None:
    """在增长表窗口上拟合证书 (L, a, b)，不可行时返回 None"""
    return _fit(table, concept, L_budget, gap_delta).certificate


def _check_schedule(schedule) -> list[int]:
    schedule = [int(M) for M in schedule]
    if len(schedule) < 3:
        raise InvalidParameterError(f"窗口序列至少需要3个元素，实际 {len(schedule)} 个")
    if schedule[0] < 1 or any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise InvalidParameterError(f"窗口序列必须为严格递增的正整数: {schedule}")
    return schedule


def classify(system: OperatorSeq, concept: Concept, horizon_schedule=DEFAULT_SCHEDULE,
             epsilon: float = DEFAULT_EPSILON, L_budget: float = DEFAULT_L_BUDGET,
             gap_delta: float = DEFAULT_GAP_DELTA, norm: Norm = Norm.TWO,
             cache: TransitionCache | None = None, table: GrowthTable | None = None) -> Classification:
    """在嵌套窗口上比较所需偏移量 L*(M_k; a, b) 的增长来分类

    (a, b) 取自最小窗口上的拟合并在之后保持不变；最后两个增量都不超过 epsilon 判为 certified，
    最后三个点的拟合斜率不小于 epsilon 判为 rejected，其余为 inconclusive。
    """
    concept = Concept(concept)
    schedule = _check_schedule(horizon_schedule)
    if not epsilon > 0:
        raise InvalidParameterError(f"epsilon 必须为正: {epsilon}")
    if table is None or table.horizon < schedule[-1]:
        cache = cache or TransitionCache(system, schedule[-1])
        table = growth_table(cache, schedule[-1], norm)

    outcome = _fit(table.restrict(schedule[0]), concept, L_budget, gap_delta)
    probe = outcome.certificate is None
    if probe:
        a = 2 * max(epsilon, gap_delta)
        b = _permissive_b(concept, a, gap_delta)
    else:
        a, b = outcome.certificate.a, outcome.certificate.b

    horizons = np.array(schedule, dtype=float)
    offsets = np.array([required_offset(table.restrict(M), a, b) for M in schedule])
    evidence = [EvidencePoint(horizon=M, offset=float(L)) for M, L in zip(schedule, offsets)]

    slope = None
    notes = []
    if np.all(np.isfinite(offsets[-3:])):
        slope = float(np.polyfit(horizons[-3:], offsets[-3:], 1)[0])
    increments = np.diff(offsets[-3:])

    if table.has_singular:
        verdict = Verdict.REJECTED
        notes.append("窗口内存在奇异乘积，最小增益为 0，下界不可能成立")
    elif not probe and np.all(increments <= epsilon):
        verdict = Verdict.CERTIFIED
    elif slope is not None and slope >= epsilon:
        verdict = Verdict.REJECTED
    elif slope is None:
        verdict = Verdict.REJECTED
    else:
        verdict = Verdict.INCONCLUSIVE

    if probe:
        notes.append(f"窗口 M={schedule[0]} 上拟合不可行（{outcome.reason}），证据按探测速率 a={a:g} 计算")
        if verdict == Verdict.INCONCLUSIVE:
            notes.append("证据有界但拟合不可行，可能需要更大的 L_budget")
    if outcome.rate_boundary:
        notes.append("速率处于 a = 0 边界")

    return Classification(
        concept=concept, verdict=verdict, a=a, b=b, slope=slope, evidence=evidence,
        epsilon=epsilon, l_budget=L_budget, gap_delta=gap_delta, schedule=schedule,
        certificate=outcome.certificate, probe=probe, rate_boundary=outcome.rate_boundary,
        note="；".join(notes),
    )


def induced_certificate(cert: Certificate, concept: Concept, gap_delta: float = DEFAULT_GAP_DELTA) -> Certificate:
    """沿 UPIS ⟹ SPIS ⟹ PIS 把证书解释成较弱概念的证书"""
    concept = Concept(concept)
    order = [Concept.UPIS, Concept.SPIS, Concept.PIS]
    if order.index(concept) < order.index(cert.concept):
        raise InvalidParameterError(f"{cert.concept.value} 证书不能推出更强的 {concept.value}")
    if concept == Concept.SPIS and not cert.b <= cert.a - gap_delta:
        raise InvalidParameterError("SPIS 要求 b <= a - gap_delta")
    return cert.model_copy(update={"concept": concept})


def triplet_margins(cache: TransitionCache, cert: Certificate, triplets: Iterable[tuple[int, int, int]],
                    vectors: np.ndarray) -> np.ndarray:
    """对每个三元组 (m, n, p) 和每个 x 给出 [L - a(m-n) + b·n + log‖A_m^p x‖] - log‖A_n^p x‖

    返回形状 (三元组数, 向量数)。
    """
    rows = []
    for m, n, p in triplets:
        lhs = log_image_norms(cache, n, p, vectors, cert.norm)
        rhs = cert.L - cert.a * (m - n) + cert.b * n + log_image_norms(cache, m, p, vectors, cert.norm)
        with np.errstate(invalid="ignore"):
            margin = np.where(np.isneginf(lhs), np.inf, rhs - lhs)
        rows.append(margin)
    return np.array(rows).reshape(-1, vectors.shape[1])


def _test_vectors(dim: int, dense: bool, rng: np.random.Generator, norm: Norm) -> np.ndarray:
    basis = np.eye(dim)
    if not dense:
        return basis
    directions = rng.standard_normal((dim, RANDOM_DIRECTIONS))
    order = {Norm.ONE: 1, Norm.TWO: 2, Norm.INFINITY: np.inf}[norm]
    directions /= np.linalg.norm(directions, ord=order, axis=0)
    return np.concatenate([basis, directions], axis=1)


def verify_certificate(system: OperatorSeq, cert: Certificate, sample_count: int = 1000, seed: int = 0,
                       cache: TransitionCache | None = None) -> VerificationReport:
    """随机抽取三元组 M >= m >= n >= p >= 0 逐点检验证书不等式"""
    M = cert.window
    cache = cache or TransitionCache(system, M)
    rng = np.random.default_rng(seed)
    dense = system.kind == OperatorKind.DENSE

    worst, worst_triplet = math.inf, None
    for _ in range(max(int(sample_count), 0)):
        m = int(rng.integers(0, M + 1))
        n = int(rng.integers(0, m + 1))
        p = int(rng.integers(0, n + 1))
        vectors = _test_vectors(system.dim, dense, rng, cert.norm)
        margin = float(np.min(triplet_margins(cache, cert, [(m, n, p)], vectors)))
        if margin < worst:
            worst, worst_triplet = margin, (m, n, p)
    return VerificationReport(
        passed=worst >= -CHECK_TOL, worst_margin=worst, worst_triplet=worst_triplet,
        samples=int(sample_count), window=M,
    )
