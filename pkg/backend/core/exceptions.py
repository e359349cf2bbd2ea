"""
异常类型定义

每个异常携带其对应的CLI退出码:
    0 成功, 2 输入错误, 3 数值失败, 4 不变量违反
"""
from typing import Optional


EXIT_OK = 0
EXIT_INPUT_ERROR = 2
EXIT_NUMERICAL_FAILURE = 3
EXIT_INVARIANT_VIOLATION = 4


class UlfsKdpeError(Exception):
    """所有领域异常的基类"""

    exit_code: int = EXIT_NUMERICAL_FAILURE


# ==================== 输入错误 ====================

class InputDataError(UlfsKdpeError):
    """输入数据格式错误"""

    exit_code = EXIT_INPUT_ERROR

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(UlfsKdpeError):
    """配置非法"""

    exit_code = EXIT_INPUT_ERROR


# ==================== 数值失败 ====================

class KernelDomainError(UlfsKdpeError):
    """核函数输入含非有限坐标"""


class DegenerateDistributionError(UlfsKdpeError):
    """均值嵌入范数退化 (κ <= 容差)"""


class PositivityViolationError(UlfsKdpeError):
    """权重出现非正值"""


class InitializationError(UlfsKdpeError):
    """工作密度初始化失败"""


class SupportLookupError(UlfsKdpeError):
    """样本点不在工作密度的支撑上"""


class DegenerateConditionalError(UlfsKdpeError):
    """条件概率分母为零"""


class StepSizeError(UlfsKdpeError):
    """指数倾斜溢出 (|Δ·D| 过大)"""


class UndefinedTargetError(UlfsKdpeError):
    """目标参数在边界处无定义 (RR/OR)"""


class PropensityError(UlfsKdpeError):
    """倾向得分过小, EIF不可用"""


class DgpValidityError(UlfsKdpeError):
    """数据生成过程的伯努利均值越界"""


class NuisanceFitError(UlfsKdpeError):
    """干扰函数拟合失败"""


# ==================== 不变量违反 ====================

class InvariantViolationError(UlfsKdpeError):
    """流不变量违反"""

    exit_code = EXIT_INVARIANT_VIOLATION

    def __init__(self, invariant: str, iteration: int, detail: str = ""):
        self.invariant = invariant
        self.iteration = iteration
        message = f"invariant '{invariant}' violated at iteration {iteration}"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


# ==================== 导出 ====================

__all__ = [
    "EXIT_OK",
    "EXIT_INPUT_ERROR",
    "EXIT_NUMERICAL_FAILURE",
    "EXIT_INVARIANT_VIOLATION",
    "UlfsKdpeError",
    "InputDataError",
    "ConfigError",
    "KernelDomainError",
    "DegenerateDistributionError",
    "PositivityViolationError",
    "InitializationError",
    "SupportLookupError",
    "DegenerateConditionalError",
    "StepSizeError",
    "UndefinedTargetError",
    "PropensityError",
    "DgpValidityError",
    "NuisanceFitError",
    "InvariantViolationError",
]
