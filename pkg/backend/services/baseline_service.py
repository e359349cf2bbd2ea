"""
对照估计器服务
初始plug-in、one-step修正与ATE的TMLE
"""
import warnings
from typing import Dict, Optional

import numpy as np
import statsmodels.api as sm
from statsmodels.tools.sm_exceptions import ConvergenceWarning, PerfectSeparationWarning

from core.density import WorkingDensity, outcome_regression, propensity
from core.exceptions import PropensityError
from core.sample import Sample
from core.targets import eif_target, estimate_targets
from models.enums import Method, TargetName
from models.schemas import BaselineResult
from utils.formulas import inverse_logit, safe_logit
from utils.logger import logger


# TMLE 波动参数的收敛阈值
EPSILON_TOLERANCE = 1e-6

# TMLE 收敛时EIF均值的上限
EIF_TOLERANCE = 1e-4


def initial_plugin(d0: WorkingDensity) -> BaselineResult:
    """未经流更新的plug-in估计"""
    targets = estimate_targets(d0)
    return BaselineResult(
        method=Method.INITIAL,
        estimates={name: targets.get(name) for name in TargetName},
    )


def one_step(
    d0: WorkingDensity,
    sample: Sample,
    which: Optional[TargetName] = None,
) -> BaselineResult:
    """
    One-step修正: ψ_init + P_n[EIF]

    Args:
        d0: 初始工作密度
        sample: 观测样本
        which: 目标参数, 为空时计算全部

    Returns:
        BaselineResult
    """
    targets = estimate_targets(d0)
    names = list(TargetName) if which is None else [TargetName(which)]
    estimates: Dict[TargetName, float] = {}
    for name in names:
        correction = float(np.mean(eif_target(d0, sample, name)))
        estimates[name] = targets.get(name) + correction
    return BaselineResult(method=Method.ONE_STEP, estimates=estimates)


def _fit_fluctuation(y: np.ndarray, clever: np.ndarray, offset: np.ndarray) -> float:
    """一维逻辑波动: logit Q̄* = logit Q̄ + ε H, 以带offset的二项GLM拟合 ε"""
    with warnings.catch_warnings():
        warnings.simplefilter("error", PerfectSeparationWarning)
        warnings.simplefilter("ignore", ConvergenceWarning)
        result = sm.GLM(
            y, clever[:, None], family=sm.families.Binomial(), offset=offset
        ).fit()
    return float(result.params[0])


def tmle_ate(d0: WorkingDensity, sample: Sample, max_fluct: int = 20) -> BaselineResult:
    """
    ATE的TMLE

    聪明协变量 H(A,X) = (2A-1)/g_A(X), 两臂的 Q̄ 同时波动,
    直到 |ε| <= 1e-6 或达到 max_fluct; 估计采用经验X边际

    Args:
        d0: 初始工作密度
        sample: 观测样本
        max_fluct: 最大波动次数

    Returns:
        BaselineResult (仅含ATE)

    Raises:
        PropensityError: 倾向得分低于 floor²
    """
    g1 = propensity(d0, 1)
    g0 = propensity(d0, 0)
    bound = d0.floor ** 2
    if np.any(np.minimum(g0, g1) < bound):
        raise PropensityError(f"propensity below {bound:.3g} in TMLE")

    if max_fluct == 0:
        initial = initial_plugin(d0)
        return BaselineResult(
            method=Method.TMLE_ATE,
            estimates={TargetName.ATE: initial.estimates[TargetName.ATE]},
            iterations=0,
            converged=False,
            detail="no fluctuation performed",
        )

    a = sample.a
    y = sample.y.astype(float)
    q1 = outcome_regression(d0, 1)
    q0 = outcome_regression(d0, 0)
    g_a = np.where(a == 1, g1, g0)
    clever = (2.0 * a - 1.0) / g_a

    epsilon = np.inf
    iterations = 0
    detail = None
    for _ in range(max_fluct):
        q_a = np.where(a == 1, q1, q0)
        try:
            epsilon = _fit_fluctuation(y, clever, safe_logit(q_a))
        except Exception as e:
            detail = f"fluctuation MLE failed: {e}"
            logger.warning(f"TMLE波动拟合失败, 保留上一迭代: {e}")
            break
        if not np.isfinite(epsilon):
            detail = "fluctuation MLE diverged"
            logger.warning("TMLE波动参数发散, 保留上一迭代")
            break

        q1 = inverse_logit(safe_logit(q1) + epsilon / g1)
        q0 = inverse_logit(safe_logit(q0) - epsilon / g0)
        iterations += 1
        if abs(epsilon) <= EPSILON_TOLERANCE:
            break

    q_a = np.where(a == 1, q1, q0)
    ate = float(np.mean(q1 - q0))
    eif = clever * (y - q_a) + (q1 - q0) - ate
    eif_mean = float(np.mean(eif))
    converged = detail is None and abs(epsilon) <= EPSILON_TOLERANCE and abs(eif_mean) <= EIF_TOLERANCE

    logger.debug(
        f"TMLE完成 - 迭代: {iterations}, ε: {epsilon:.3e}, P_n[EIF]: {eif_mean:.3e}, 收敛: {converged}"
    )
    return BaselineResult(
        method=Method.TMLE_ATE,
        estimates={TargetName.ATE: ate},
        iterations=iterations,
        converged=converged,
        detail=detail,
    )


__all__ = [
    "EPSILON_TOLERANCE",
    "EIF_TOLERANCE",
    "initial_plugin",
    "one_step",
    "tmle_ate",
]
