"""
目标泛函与有效影响函数

μ_a(P) = Σ_i P_X(X_i) Q̄(a, X_i)
ψ_ATE = μ1 - μ0, ψ_RR = μ1 / μ0, ψ_OR = [μ1/(1-μ1)] / [μ0/(1-μ0)]

EIF按AIPW形式与delta方法给出, 倾向得分取自工作密度本身
"""
from typing import Tuple

import numpy as np

from core.density import WorkingDensity, group_mass, outcome_regression, propensity
from core.exceptions import PropensityError, SupportLookupError, UndefinedTargetError
from core.sample import Sample
from models.enums import TargetName
from models.schemas import TargetEstimates


def mu_a(d: WorkingDensity, a: int) -> float:
    """
    平均潜在结局 μ_a = Σ_i P_X(X_i) Q̄(a, X_i)

    Raises:
        DegenerateConditionalError: 条件概率分母为零
    """
    return float(np.sum(group_mass(d) * outcome_regression(d, a)))


def estimate_targets(d: WorkingDensity) -> TargetEstimates:
    """
    同一密度下同时计算 ATE/RR/OR

    Raises:
        UndefinedTargetError: μ0 ∈ {0,1} 或 μ1 = 1
    """
    return TargetEstimates.from_means(mu0=mu_a(d, 0), mu1=mu_a(d, 1))


def delta_method_gradient(mu0: float, mu1: float, which: TargetName) -> Tuple[float, float]:
    """
    目标参数对 (μ0, μ1) 的梯度

    ATE: (-1, 1)
    RR:  (-μ1/μ0², 1/μ0)
    OR:  (-OR/(μ0(1-μ0)), OR/(μ1(1-μ1)))

    Raises:
        UndefinedTargetError: RR/OR在边界处无定义
    """
    which = TargetName(which)
    if which == TargetName.ATE:
        return -1.0, 1.0

    if not (0.0 < mu0 < 1.0):
        raise UndefinedTargetError(f"gradient undefined at mu0={mu0}")
    if which == TargetName.RR:
        return -mu1 / mu0 ** 2, 1.0 / mu0

    if not (0.0 < mu1 < 1.0):
        raise UndefinedTargetError(f"gradient undefined at mu1={mu1}")
    odds_ratio = (mu1 / (1.0 - mu1)) / (mu0 / (1.0 - mu0))
    return -odds_ratio / (mu0 * (1.0 - mu0)), odds_ratio / (mu1 * (1.0 - mu1))


def eif_mu_a(d: WorkingDensity, sample: Sample, a: int) -> np.ndarray:
    """
    μ_a 的有效影响函数在样本点上的取值

    公式: φ_a(O) = 1{A=a}/g_a(X) · (Y - Q̄(a,X)) + Q̄(a,X) - μ_a

    Raises:
        PropensityError: g_a 低于 floor²
        SupportLookupError: 样本量与密度协变量组数不一致
    """
    if sample.n != d.n:
        raise SupportLookupError(f"sample size {sample.n} does not match density groups {d.n}")

    g = propensity(d, a)
    bound = d.floor ** 2
    if np.any(g < bound):
        raise PropensityError(f"propensity for a={a} below {bound:.3g}: min={float(g.min()):.3g}")

    q = outcome_regression(d, a)
    mu = float(np.sum(group_mass(d) * q))
    indicator = (sample.a == a).astype(float)
    return indicator / g * (sample.y - q) + q - mu


def eif_target(d: WorkingDensity, sample: Sample, which: TargetName) -> np.ndarray:
    """
    目标参数的有效影响函数 (delta方法组合 φ_0, φ_1)

    Raises:
        PropensityError: 倾向得分过小
        UndefinedTargetError: μ 在边界
    """
    phi0 = eif_mu_a(d, sample, 0)
    phi1 = eif_mu_a(d, sample, 1)
    grad0, grad1 = delta_method_gradient(mu_a(d, 0), mu_a(d, 1), which)
    return grad0 * phi0 + grad1 * phi1


__all__ = [
    "mu_a",
    "estimate_targets",
    "delta_method_gradient",
    "eif_mu_a",
    "eif_target",
]
