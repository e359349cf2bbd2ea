"""
数据生成过程与真值预言机

DGP1: X ~ U(0,1)
      A|X ~ Bern(0.5 + sin(50X/π)/3)
      Y|A,X ~ Bern(0.4 + A(X - 0.3)² + sin(40X/π)/4)
DGP2: X ~ 0.9·U(-1,1) + 0.1·U(-2,2)
      A|X ~ Bern(expit(4X))
      Y|A,X ~ Bern(expit(-0.5 + A + 0.5X))

真值按分段复合中点公式求积: E[f(X)] = Σ_k w_k ∫_{lo_k}^{hi_k} f(x) dx
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Tuple

import numpy as np
from scipy.special import expit

from core.exceptions import DgpValidityError
from core.sample import Sample
from models.enums import DgpId
from models.schemas import TargetEstimates


# 默认积分节点数 (每段)
DEFAULT_NODES = 10 ** 6


@dataclass(frozen=True)
class DataGeneratingProcess:
    """数据生成过程

    quadrature 为 (权重, 下限, 上限) 三元组, 权重乘区间长度之和为 1
    """

    name: str
    sample_x: Callable[[np.random.Generator, int], np.ndarray]
    propensity: Callable[[np.ndarray], np.ndarray]
    outcome_mean: Callable[[np.ndarray, np.ndarray], np.ndarray]
    quadrature: Tuple[Tuple[float, float, float], ...]


# ==================== DGP1 ====================

def _dgp1_x(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.uniform(0.0, 1.0, size=n)


def dgp1_propensity(x: np.ndarray) -> np.ndarray:
    """e(1|x) = 0.5 + sin(50x/π)/3"""
    return 0.5 + np.sin(50.0 * x / np.pi) / 3.0


def dgp1_outcome_mean(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """q(1|a,x) = 0.4 + a(x - 0.3)² + sin(40x/π)/4"""
    return 0.4 + a * (x - 0.3) ** 2 + 0.25 * np.sin(40.0 * x / np.pi)


DGP1 = DataGeneratingProcess(
    name=DgpId.DGP1.value,
    sample_x=_dgp1_x,
    propensity=dgp1_propensity,
    outcome_mean=dgp1_outcome_mean,
    quadrature=((1.0, 0.0, 1.0),),
)


# ==================== DGP2 ====================

def _dgp2_x(rng: np.random.Generator, n: int) -> np.ndarray:
    wide = rng.uniform(0.0, 1.0, size=n) < 0.1
    return np.where(wide, rng.uniform(-2.0, 2.0, size=n), rng.uniform(-1.0, 1.0, size=n))


def dgp2_propensity(x: np.ndarray) -> np.ndarray:
    """e(1|x) = expit(4x)"""
    return expit(4.0 * x)


def dgp2_outcome_mean(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """q(1|a,x) = expit(-0.5 + a + 0.5x)"""
    return expit(-0.5 + a + 0.5 * x)


# 混合密度: 0.9 · 1/2 · 1[-1,1] + 0.1 · 1/4 · 1[-2,2]
DGP2 = DataGeneratingProcess(
    name=DgpId.DGP2.value,
    sample_x=_dgp2_x,
    propensity=dgp2_propensity,
    outcome_mean=dgp2_outcome_mean,
    quadrature=((0.45, -1.0, 1.0), (0.025, -2.0, 2.0)),
)


DGP_REGISTRY = {
    DgpId.DGP1: DGP1,
    DgpId.DGP2: DGP2,
}


def get_dgp(dgp_id) -> DataGeneratingProcess:
    """按标识获取数据生成过程"""
    return DGP_REGISTRY[DgpId(dgp_id)]


# ==================== 采样 ====================

def _check_bernoulli_mean(p: np.ndarray, what: str, dgp: DataGeneratingProcess) -> None:
    if not np.all((p > 0.0) & (p < 1.0)):
        bad = p[~((p > 0.0) & (p < 1.0))]
        raise DgpValidityError(f"{dgp.name}: {what} mean outside (0,1): {bad[:5]}")


def sample_dgp(dgp: DataGeneratingProcess, n: int, seed: int) -> Sample:
    """
    从数据生成过程抽样 (顺序: X, A, Y)

    Raises:
        DgpValidityError: 伯努利均值不在 (0,1) 内
    """
    rng = np.random.default_rng(seed)
    x = dgp.sample_x(rng, n)

    e = dgp.propensity(x)
    _check_bernoulli_mean(e, "propensity", dgp)
    a = rng.binomial(1, e)

    q = dgp.outcome_mean(a, x)
    _check_bernoulli_mean(q, "outcome", dgp)
    y = rng.binomial(1, q)

    return Sample(x=x, a=a, y=y)


def sample_dgp1(n: int, seed: int) -> Tuple[Sample, TargetEstimates]:
    """DGP1 样本与真值"""
    return sample_dgp(DGP1, n, seed), true_value_oracle(DgpId.DGP1)


def sample_dgp2(n: int, seed: int) -> Tuple[Sample, TargetEstimates]:
    """DGP2 样本与真值"""
    return sample_dgp(DGP2, n, seed), true_value_oracle(DgpId.DGP2)


# ==================== 真值 ====================

def compute_truth(dgp: DataGeneratingProcess, nodes: int = DEFAULT_NODES) -> TargetEstimates:
    """
    复合中点公式计算 μ0, μ1 与三个目标参数

    Args:
        dgp: 数据生成过程
        nodes: 每段的均匀节点数

    Returns:
        真值
    """
    mu = []
    for a in (0, 1):
        total = 0.0
        for weight, lo, hi in dgp.quadrature:
            h = (hi - lo) / nodes
            midpoints = lo + h * (np.arange(nodes) + 0.5)
            values = dgp.outcome_mean(np.full(nodes, a), midpoints)
            total += weight * h * float(np.sum(values))
        mu.append(total)
    return TargetEstimates.from_means(mu0=mu[0], mu1=mu[1])


@lru_cache(maxsize=8)
def true_value_oracle(dgp_id, nodes: int = DEFAULT_NODES) -> TargetEstimates:
    """按标识计算真值 (进程内缓存)"""
    return compute_truth(get_dgp(dgp_id), nodes)


__all__ = [
    "DEFAULT_NODES",
    "DataGeneratingProcess",
    "DGP1",
    "DGP2",
    "DGP_REGISTRY",
    "get_dgp",
    "dgp1_propensity",
    "dgp1_outcome_mean",
    "dgp2_propensity",
    "dgp2_outcome_mean",
    "sample_dgp",
    "sample_dgp1",
    "sample_dgp2",
    "compute_truth",
    "true_value_oracle",
]
