"""
枚举类型定义
"""
from enum import Enum


class NormalizationMode(str, Enum):
    """归一化模式枚举"""

    GLOBAL = "global"  # 联合分布整体归一化
    XFIXED = "xfixed"  # 固定经验X边际, 每组归一到1/n


class StopRule(str, Enum):
    """停止规则枚举"""

    SC1 = "sc1"  # 密度平台
    SC2 = "sc2"  # 得分平台
    SC3 = "sc3"  # 更新方向消失
    SC4 = "sc4"  # 方差主导更新
    SC5 = "sc5"  # EIF近似求解
    SCORE_TARGET = "score_target"  # 硬得分目标 s_t <= δ_n
    MAX_ITERS = "max_iters"  # 达到迭代上限

    @classmethod
    def get_description(cls, rule: str) -> str:
        """获取停止规则描述"""
        descriptions = {
            "sc1": "Density plateau",
            "sc2": "Score plateau",
            "sc3": "Vanishing update direction",
            "sc4": "Variance-dominated updates",
            "sc5": "EIF approximately solved",
            "score_target": "Empirical score target reached",
            "max_iters": "Iteration limit reached",
        }
        return descriptions.get(rule, "未知停止规则")


# 同一迭代多条规则同时触发时的优先级
STOP_RULE_PRIORITY = [
    StopRule.SC3,
    StopRule.SC2,
    StopRule.SC1,
    StopRule.SC4,
    StopRule.SC5,
]


class TargetName(str, Enum):
    """目标参数枚举"""

    ATE = "ate"
    RR = "rr"
    OR = "or"


class Method(str, Enum):
    """估计方法枚举"""

    ULFS_KDPE = "ulfs_kdpe"
    INITIAL = "initial"
    ONE_STEP = "one_step"
    TMLE_ATE = "tmle_ate"


class DgpId(str, Enum):
    """数据生成过程枚举"""

    DGP1 = "DGP1"
    DGP2 = "DGP2"


class LearnerId(str, Enum):
    """候选学习器枚举"""

    MEAN = "mean"
    LOGISTIC = "logistic"
    NW = "nw"


class InvariantMode(str, Enum):
    """不变量检查模式"""

    OFF = "off"  # 不检查
    RECORD = "record"  # 记录并告警
    RAISE = "raise"  # 违反即抛出异常


class InvariantName(str, Enum):
    """流不变量名称"""

    LYAPUNOV_MONOTONICITY = "lyapunov_monotonicity"
    CENTERED_DIRECTION = "centered_direction"
    SCORE_NONNEGATIVE = "score_nonnegative"
    SCORE_EMBEDDING_BOUND = "score_embedding_bound"
    EMBEDDING_NORM_IDENTITY = "embedding_norm_identity"
    MASS_CONSERVATION = "mass_conservation"
    MASS_NORMALIZATION = "mass_normalization"
    DIRECTION_BOUND = "direction_bound"


# 导出枚举
__all__ = [
    "NormalizationMode",
    "StopRule",
    "STOP_RULE_PRIORITY",
    "TargetName",
    "Method",
    "DgpId",
    "LearnerId",
    "InvariantMode",
    "InvariantName",
]
