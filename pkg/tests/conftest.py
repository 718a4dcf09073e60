import math

import numpy as np
import pytest

from app.models.enums import OperatorKind
from app.services.systems import (
    OperatorSeq, StepOperator, make_constant, make_paper_example, make_random_diagonal,
)
from app.services.transition import TransitionCache

LOG2 = math.log(2.0)


def random_dense_system(seed: int, dim: int) -> OperatorSeq:
    """每步为随机稠密矩阵的系统，系数由 (seed, n) 决定"""

    def rule(n: int) -> StepOperator:
        rng = np.random.default_rng([seed, n])
        return StepOperator.dense(rng.standard_normal((dim, dim)) + 1.5 * np.eye(dim))

    return OperatorSeq(kind=OperatorKind.DENSE, dim=dim, rule=rule, label=f"dense(seed={seed})")


def assert_same_operator(left: StepOperator, right: StepOperator, rtol: float = 1e-9) -> None:
    """比较两个算子：标量/对角比较对数模，稠密比较相对最大元素的矩阵"""
    assert left.kind == right.kind and left.dim == right.dim
    if left.kind == OperatorKind.DENSE:
        assert left.is_zero == right.is_zero
        if left.is_zero:
            return
        scale = max(left.log_scale, right.log_scale)
        a = left.matrix * math.exp(left.log_scale - scale)
        b = right.matrix * math.exp(right.log_scale - scale)
        np.testing.assert_allclose(a, b, rtol=rtol, atol=rtol)
    else:
        np.testing.assert_array_equal(left.zero, right.zero)
        live = ~left.zero
        np.testing.assert_allclose(left.log_mag[live], right.log_mag[live], rtol=0, atol=rtol)


@pytest.fixture
def example2():
    return make_paper_example(2.0)


@pytest.fixture
def const2():
    return make_constant(StepOperator.scalar(2.0), 1)


@pytest.fixture
def diag23():
    return make_constant(StepOperator.diagonal([2.0, 3.0]), 2)


@pytest.fixture
def random_diag():
    return make_random_diagonal(3, 1, (0.2, 1.0))


@pytest.fixture
def example2_cache(example2):
    return TransitionCache(example2, 64)
