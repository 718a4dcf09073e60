from enum import Enum


class OperatorKind(str, Enum):
    """系数算子的存储方式"""
    SCALAR = "scalar"
    DIAGONAL = "diagonal"
    DENSE = "dense"


class Norm(str, Enum):
    ONE = "one"
    TWO = "two"
    INFINITY = "infinity"


class Concept(str, Enum):
    """三种幂不稳定性概念"""
    UPIS = "UPIS"  # 一致幂不稳定
    PIS = "PIS"    # 幂不稳定
    SPIS = "SPIS"  # 强幂不稳定


class Variant(str, Enum):
    """求和判据的三种形式"""
    THM2 = "THM2"    # c ∈ [1, d)
    PROP3 = "PROP3"  # 1 <= 2c < d
    COR4 = "COR4"    # c = 1


class Verdict(str, Enum):
    CERTIFIED = "certified"
    REJECTED = "rejected"
    INCONCLUSIVE = "inconclusive"


# 判据形式与不稳定性概念的对应关系
VARIANT_CONCEPT: dict[Variant, Concept] = {
    Variant.THM2: Concept.PIS,
    Variant.PROP3: Concept.SPIS,
    Variant.COR4: Concept.UPIS,
}
