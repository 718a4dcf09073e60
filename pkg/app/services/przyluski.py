"""求和判据 Σ_{k=n}^{m} d^{m-k}‖A_k^n x‖ <= D c^m ‖A_m^n x‖ 的计算、拟合与双向构造"""
import math

import numpy as np
from scipy.special import logsumexp

from app.core.errors import InvalidParameterError
from app.models.certificates import Certificate
from app.models.criterion import CriterionFit, EquivalenceReport
from app.models.enums import VARIANT_CONCEPT, Concept, Norm, OperatorKind, Variant
from app.services.certify import (
    DEFAULT_GAP_DELTA, DEFAULT_L_BUDGET, CHECK_TOL, fit_certificate, verify_certificate,
)
from app.services.systems import LOG2, OperatorSeq, max_step_gain
from app.services.transition import TransitionCache, forward_log_norms, growth_table

DEFAULT_KAPPA = 2.0
DEFAULT_CRITERION_BUDGET = 5.0
DEFAULT_GRID_POINTS = 17
SAMPLED_DIRECTIONS = 4  # 稠密系统在基向量之外的随机方向数


def weighted_sum(cache: TransitionCache, m: int, n: int, x, d: float, norm: Norm = Norm.TWO) -> float:
    """log Σ_{k=n}^{m} d^{m-k}‖A_k^n x‖，用 log-sum-exp 求和"""
    if not d > 0 or not math.isfinite(d):
        raise InvalidParameterError(f"d 必须为正的有限数: {d}")
    log_norms = forward_log_norms(cache, n, m, x, norm)
    weights = (m - np.arange(n, m + 1)) * math.log(d)
    with np.errstate(divide="ignore"):
        return float(logsumexp(weights + log_norms))


def criterion_vectors(system: OperatorSeq, seed: int = 0, norm: Norm = Norm.TWO) -> tuple[np.ndarray, str]:
    """判据检验用的单位向量：标量/对角用基向量（精确），稠密再加随机方向（采样）"""
    basis = np.eye(system.dim)
    if system.kind != OperatorKind.DENSE:
        return basis, "exact"
    rng = np.random.default_rng(seed)
    directions = rng.standard_normal((system.dim, SAMPLED_DIRECTIONS))
    order = {Norm.ONE: 1, Norm.TWO: 2, Norm.INFINITY: np.inf}[Norm(norm)]
    directions /= np.linalg.norm(directions, ord=order, axis=0)
    return np.concatenate([basis, directions], axis=1), "sampled"


class CriterionData:
    """窗口内全部 log ‖A_k^n x‖，与 d 无关，可在整个 d 网格上复用

    norms[n, j, k] 对 k < n 为 NaN。
    """

    def __init__(self, cache: TransitionCache, M: int, vectors: np.ndarray, norm: Norm = Norm.TWO):
        self.M = M
        self.norm = Norm(norm)
        count = vectors.shape[1]
        self.norms = np.full((M + 1, count, M + 1), np.nan)
        for n in range(M + 1):
            for j in range(count):
                self.norms[n, j, n:] = forward_log_norms(cache, n, M, vectors[:, j], self.norm)
        self.steps = np.arange(M + 1, dtype=float)

    def ratios(self, logd: float) -> np.ndarray:
        """R(m, n, x) = log S(m, n, x; d) - log ‖A_m^n x‖，形状同 norms，k 作为 m"""
        ratios = np.full(self.norms.shape, np.nan)
        for n in range(self.M + 1):
            tail = self.norms[n, :, n:]
            shifted = tail - self.steps[None, n:] * logd
            with np.errstate(divide="ignore", invalid="ignore"):
                log_sum = np.logaddexp.accumulate(shifted, axis=1) + self.steps[None, n:] * logd
                ratio = log_sum - tail
            ratios[n, :, n:] = np.where(np.isneginf(tail), np.inf, ratio)
        return ratios


def _max_logc(variant: Variant, logd: float, gap_delta: float) -> float:
    if variant == Variant.THM2:
        return logd - gap_delta
    if variant == Variant.PROP3:
        return logd - LOG2 - gap_delta
    return 0.0


def _fit_at(data: CriterionData, variant: Variant, logd: float, gap_delta: float) -> tuple[float, float, float] | None:
    """d 固定时的二元线性规划：min logD s.t. logD + m·logc >= R，logD >= 0，0 <= logc <= c_max"""
    logc_max = _max_logc(variant, logd, gap_delta)
    if logc_max < 0:
        return None
    ratios = data.ratios(logd)
    m = np.broadcast_to(data.steps, ratios.shape)
    valid = ~np.isnan(ratios)
    R, m = ratios[valid], m[valid]
    if np.any(np.isposinf(R)):
        return None
    logD = max(0.0, float(np.max(R - m * logc_max)))
    later = m > 0
    logc = max(0.0, float(np.max((R[later] - logD) / m[later]))) if np.any(later) else 0.0
    logc = min(logc, logc_max)
    slack = float(np.min(logD + m * logc - R))
    return logD, logc, slack


def default_d_grid(system: OperatorSeq, M: int, points: int = DEFAULT_GRID_POINTS) -> list[float]:
    """(1, 4·最大单步增益] 上对数均匀分布的 d"""
    top = math.log(4.0) + max_step_gain(system, max(M, 1))
    if not top > 0 or not math.isfinite(top):
        top = math.log(4.0)
    return [math.exp(top * i / points) for i in range(1, points + 1)]


def fit_criterion(system: OperatorSeq, M: int, variant: Variant, d_grid: list[float] | None = None,
                  criterion_budget: float = DEFAULT_CRITERION_BUDGET, gap_delta: float = DEFAULT_GAP_DELTA,
                  norm: Norm = Norm.TWO, seed: int = 0, cache: TransitionCache | None = None) -> CriterionFit | None:
    """在 d 网格上拟合判据常数，取可行的最大 d，同 d 时取最小 logD；全部不可行时返回 None"""
    variant = Variant(variant)
    if M < 0:
        raise InvalidParameterError(f"窗口 M 必须非负: {M}")
    grid = list(d_grid) if d_grid is not None else default_d_grid(system, M)
    if not grid:
        raise InvalidParameterError("d 网格不能为空")
    for d in grid:
        if not d > 1 or not math.isfinite(d):
            raise InvalidParameterError(f"d 网格中的每个值都必须大于1: {d}")

    cache = cache or TransitionCache(system, M)
    vectors, coverage = criterion_vectors(system, seed, norm)
    data = CriterionData(cache, M, vectors, norm)

    best: CriterionFit | None = None
    for d in sorted(set(grid)):
        logd = math.log(d)
        result = _fit_at(data, variant, logd, gap_delta)
        if result is None:
            continue
        logD, logc, slack = result
        if logD > criterion_budget:
            continue
        candidate = CriterionFit(variant=variant, logD=logD, logd=logd, logc=logc, window=M,
                                 slack=slack, x_coverage=coverage, source="fit")
        if best is None or logd > best.logd or (logd == best.logd and logD < best.logD):
            best = candidate
    if best is not None and coverage == "sampled":
        best.warnings.append("稠密系统只在采样向量上检验，结果是下界意义的")
    return best


def criterion_margin(cache: TransitionCache, fit: CriterionFit, M: int | None = None,
                     seed: int = 0, norm: Norm = Norm.TWO) -> float:
    """min over 窗口 (m, n, x) of logD + m·logc + log‖A_m^n x‖ - log S"""
    M = fit.window if M is None else M
    vectors, _ = criterion_vectors(cache.system, seed, norm)
    data = CriterionData(cache, M, vectors, norm)
    ratios = data.ratios(fit.logd)
    m = np.broadcast_to(data.steps, ratios.shape)
    valid = ~np.isnan(ratios)
    with np.errstate(invalid="ignore"):
        margins = fit.logD + m[valid] * fit.logc - ratios[valid]
    return float(np.min(margins))


def certificate_to_criterion(cert: Certificate, kappa: float = DEFAULT_KAPPA,
                             variant: Variant | None = None) -> CriterionFit:
    """由证书构造判据常数

    THM2/PROP3：d = κ·s/r，c = κ·s，D = N·κ/(κ-1)；
    COR4（需要 UPIS 证书且 a > log κ）：d = (1/r)/κ，c = 1，D = N·κ/(κ-1)。
    几何级数因子 κ/(κ-1) 保证构造出的常数确实满足求和不等式。
    """
    if not kappa > 1 or not math.isfinite(kappa):
        raise InvalidParameterError(f"kappa 必须大于1: {kappa}")
    if not cert.a > 0:
        raise InvalidParameterError(f"证书速率 a 必须为正: {cert.a}")
    variant = Variant(variant or Variant.THM2)
    log_kappa = math.log(kappa)
    logD = cert.L + math.log(kappa / (kappa - 1))
    warnings = []

    if variant == Variant.COR4:
        if cert.concept != Concept.UPIS or cert.b != 0:
            raise InvalidParameterError("COR4 形式需要 b = 0 的 UPIS 证书")
        if not cert.a > log_kappa:
            raise InvalidParameterError(f"COR4 形式需要 a > log κ ({cert.a:.6g} <= {log_kappa:.6g})")
        logd, logc = cert.a - log_kappa, 0.0
    else:
        logd, logc = log_kappa + cert.b + cert.a, log_kappa + cert.b
        if variant == Variant.PROP3 and not cert.a > LOG2:
            warnings.append(f"a = {cert.a:.6g} <= log 2，构造的常数不满足 2c < d，按 THM2 形式给出")
            variant = Variant.THM2
    return CriterionFit(variant=variant, logD=logD, logd=logd, logc=logc, window=cert.window,
                        x_coverage="exact", source="certificate", warnings=warnings)


def criterion_to_certificate(fit: CriterionFit) -> Certificate:
    """由判据常数构造证书：N = D，r = c/d，s = c"""
    a, b = fit.logd - fit.logc, fit.logc
    concept = VARIANT_CONCEPT[fit.variant]
    warnings = []
    if concept == Concept.SPIS and not b < a:
        warnings.append("c² >= d，构造的 s = c 不满足 s < 1/r，降级为 PIS")
        concept = Concept.PIS
    if concept == Concept.UPIS:
        b = 0.0
    return Certificate(concept=concept, L=fit.logD, a=a, b=b, window=fit.window, slack=None, warnings=warnings)


def _status(margin: float) -> tuple[str, bool]:
    passed = margin >= -CHECK_TOL
    return ("verified" if passed else "failed"), passed


def check_equivalence(system: OperatorSeq, M: int, variant: Variant, seeds=(0,),
                      kappa: float = DEFAULT_KAPPA, L_budget: float = DEFAULT_L_BUDGET,
                      gap_delta: float = DEFAULT_GAP_DELTA, d_grid: list[float] | None = None,
                      criterion_budget: float = DEFAULT_CRITERION_BUDGET, sample_count: int = 1000,
                      norm: Norm = Norm.TWO, cache: TransitionCache | None = None) -> list[EquivalenceReport]:
    """双向构造性检验：证书 -> 判据，以及 判据 -> 证书"""
    variant = Variant(variant)
    seeds = list(seeds) or [0]
    cache = cache or TransitionCache(system, M)
    concept = VARIANT_CONCEPT[variant]
    reports = []

    # 定义 -> 判据
    forward = EquivalenceReport(system=system.label, variant=variant, direction="definition->criterion",
                                status="infeasible")
    cert = fit_certificate(growth_table(cache, M, norm), concept, L_budget, gap_delta) if M >= 1 else None
    if cert is None:
        forward.notes.append(f"窗口 M={M} 上 {concept.value} 证书不可行")
    else:
        forward.source = cert.to_record()
        used_kappa = kappa
        if variant == Variant.COR4 and not cert.a > math.log(kappa):
            used_kappa = math.exp(cert.a / 2)
            forward.notes.append(f"a <= log κ，改用 κ = e^(a/2) = {used_kappa:.6g}")
        fit = certificate_to_criterion(cert, used_kappa, variant)
        forward.constructed = fit.to_record()
        forward.notes.extend(fit.warnings)
        forward.notes.append("D 含几何级数因子 κ/(κ-1)")
        margin = min(criterion_margin(cache, fit, M, seed, norm) for seed in seeds)
        fit.slack = margin
        forward.constructed = fit.to_record()
        forward.margin = margin
        forward.status, forward.passed = _status(margin)
    reports.append(forward)

    # 判据 -> 定义
    backward = EquivalenceReport(system=system.label, variant=variant, direction="criterion->definition",
                                 status="infeasible")
    fit = fit_criterion(system, M, variant, d_grid, criterion_budget, gap_delta, norm, seeds[0], cache) if M >= 1 else None
    if fit is None:
        backward.notes.append(f"窗口 M={M} 上 {variant.value} 判据不可行")
    else:
        backward.source = fit.to_record()
        constructed = criterion_to_certificate(fit)
        backward.notes.extend(fit.warnings)
        backward.notes.extend(constructed.warnings)
        reports_by_seed = [verify_certificate(system, constructed, sample_count, seed, cache) for seed in seeds]
        margin = min(report.worst_margin for report in reports_by_seed)
        backward.constructed = constructed.to_record()
        backward.margin = margin
        backward.status, backward.passed = _status(margin)
    reports.append(backward)

    if forward.status == "infeasible" and backward.status == "infeasible":
        for report in reports:
            report.notes.append("两个方向都不可行，结论一致")
    return reports
