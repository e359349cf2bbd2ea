"""
公式计算模块
实现概率截断、logit变换、蒙特卡洛矩统计等共用公式
"""
from typing import Dict

import numpy as np
from scipy.special import expit, logit


# 学习器预测值的截断区间
PREDICTION_CLIP = 1e-6


def clamp_probability(p, lower: float = PREDICTION_CLIP, upper: float = None) -> np.ndarray:
    """
    将概率截断到 [lower, upper]

    Args:
        p: 概率数组
        lower: 下界
        upper: 上界, 默认 1 - lower

    Returns:
        截断后的数组
    """
    if upper is None:
        upper = 1.0 - lower
    return np.clip(np.asarray(p, dtype=float), lower, upper)


def safe_logit(p, bound: float = PREDICTION_CLIP) -> np.ndarray:
    """
    截断后的logit

    公式: logit(p) = log(p / (1 - p))
    """
    return logit(clamp_probability(p, bound))


def inverse_logit(z) -> np.ndarray:
    """公式: expit(z) = 1 / (1 + exp(-z))"""
    return expit(np.asarray(z, dtype=float))


def bernoulli_log_loss(y, p) -> float:
    """
    伯努利负对数似然均值

    公式: L = -mean(y log p + (1 - y) log(1 - p))
    """
    y = np.asarray(y, dtype=float)
    p = clamp_probability(p)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def monte_carlo_moments(estimates, truth: float) -> Dict[str, float]:
    """
    计算蒙特卡洛偏差、方差与RMSE

    公式:
        bias = ψ̄ - ψ
        var  = (1/B) Σ (ψ̂_b - ψ̄)²
        rmse = sqrt((1/B) Σ (ψ̂_b - ψ)²)

    np.mean 采用按索引顺序的成对求和, 结果与并行度无关

    Args:
        estimates: 各次重复的估计值
        truth: 真值

    Returns:
        {bias, var, rmse, mean}
    """
    values = np.asarray(estimates, dtype=float)
    if values.size == 0:
        return {"bias": float("nan"), "var": float("nan"), "rmse": float("nan"), "mean": float("nan")}

    mean = float(np.mean(values))
    var = float(np.mean((values - mean) ** 2))
    rmse = float(np.sqrt(np.mean((values - truth) ** 2)))
    return {"bias": mean - truth, "var": var, "rmse": rmse, "mean": mean}


def standardize(estimates, truth: float) -> np.ndarray:
    """
    标准化估计值 (直方图数据)

    公式: z_b = (ψ̂_b - ψ) / sd(ψ̂)
    """
    values = np.asarray(estimates, dtype=float)
    sd = float(np.std(values))
    if sd == 0.0:
        return np.zeros_like(values)
    return (values - truth) / sd


# 导出所有函数
__all__ = [
    "PREDICTION_CLIP",
    "clamp_probability",
    "safe_logit",
    "inverse_logit",
    "bernoulli_log_loss",
    "monte_carlo_moments",
    "standardize",
]
