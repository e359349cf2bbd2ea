"""
高斯核与均值零投影核

样本空间上的基础核:
    K(o, o') = exp(-‖z(o) - z(o')‖² / 2σ²),  z(o) = (x, s·a, s·y)

离散分布 P 下的均值嵌入与均值零核:
    m_P(o)      = Σ_i w_i K(o, atom_i)
    κ           = ‖m_P‖² = Σ_ij w_i w_j K(atom_i, atom_j)
    K^(P)(o,o') = K(o,o') - m_P(o) m_P(o') / κ

原子按 (协变量组 i, 编码 c = 2a + y) 排列, 权重存为 (n, 4) 矩阵。
高斯核在 (x, a, y) 上可分解, 原子Gram矩阵等于协变量Gram与4x4编码Gram的
逐块乘积, 因此只需缓存 n×n 的协变量Gram。
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy.spatial.distance import cdist, pdist

from core.exceptions import DegenerateDistributionError, KernelDomainError
from core.sample import BINARY_CODES, Sample
from models.schemas import KernelConfig, Observation
from utils.logger import logger


# κ 的退化阈值
KAPPA_TOLERANCE = 1e-14

# 权重和的容差
WEIGHT_SUM_TOLERANCE = 1e-10


def embed_observation(o: Observation, binary_scale: float = 1.0) -> np.ndarray:
    """
    将观测嵌入欧氏空间 z = (x, s·a, s·y)

    Raises:
        KernelDomainError: 坐标非有限
    """
    z = np.array(list(o.x) + [binary_scale * o.a, binary_scale * o.y], dtype=float)
    if not np.all(np.isfinite(z)):
        raise KernelDomainError(f"non-finite coordinates in observation: {o}")
    return z


def embed_sample(sample: Sample, binary_scale: float = 1.0) -> np.ndarray:
    """将整个样本嵌入为 (n, d+2) 数组"""
    z = np.column_stack([sample.x, binary_scale * sample.a, binary_scale * sample.y]).astype(float)
    if not np.all(np.isfinite(z)):
        raise KernelDomainError("non-finite coordinates in sample")
    return z


def gauss_kernel(o: Observation, o2: Observation, cfg: KernelConfig) -> float:
    """
    高斯核 K(o, o')

    Args:
        o: 观测
        o2: 观测
        cfg: 核参数

    Returns:
        exp(-D² / 2σ²) ∈ (0, 1]
    """
    z1 = embed_observation(o, cfg.binary_scale)
    z2 = embed_observation(o2, cfg.binary_scale)
    sq_dist = float(np.sum((z1 - z2) ** 2))
    return float(np.exp(-sq_dist / (2.0 * cfg.sigma ** 2)))


def median_heuristic(sample: Sample, binary_scale: float = 1.0) -> float:
    """
    中位数启发式带宽: 观测样本两两嵌入距离的中位数

    Args:
        sample: 观测样本
        binary_scale: a,y坐标缩放

    Returns:
        带宽 σ (中位数为0时退回1.0)
    """
    if sample.n < 2:
        logger.warning("样本量不足2, 中位数启发式退回 σ=1.0")
        return 1.0

    sigma = float(np.median(pdist(embed_sample(sample, binary_scale))))
    if not np.isfinite(sigma) or sigma <= 0.0:
        logger.warning(f"两两距离中位数为 {sigma}, 退回 σ=1.0")
        return 1.0

    logger.debug(f"中位数启发式带宽 - σ: {sigma:.6f}, n: {sample.n}")
    return sigma


def covariate_gram(x1: np.ndarray, x2: np.ndarray, sigma: float) -> np.ndarray:
    """
    协变量部分的Gram矩阵 exp(-‖x - x'‖² / 2σ²)

    cdist 逐对计算平方距离, x1 is x2 时结果逐位对称
    """
    sq = cdist(np.atleast_2d(x1), np.atleast_2d(x2), metric="sqeuclidean")
    return np.exp(-sq / (2.0 * sigma ** 2))


def binary_gram(cfg: KernelConfig) -> np.ndarray:
    """四种 (a, y) 编码之间的 4x4 Gram矩阵"""
    codes = cfg.binary_scale * BINARY_CODES
    return covariate_gram(codes, codes, cfg.sigma)


@dataclass(frozen=True)
class CenteredKernel:
    """
    离散分布快照下的均值零投影核

    不可变, 可在线程间共享; 权重变化时通过 reweight 生成新快照
    """

    config: KernelConfig
    x: np.ndarray  # (n, d) 协变量组
    weights: np.ndarray  # (n, 4) 原子权重
    kx: np.ndarray  # (n, n) 协变量Gram
    bgram: np.ndarray  # (4, 4) 编码Gram
    m_values: np.ndarray  # (n, 4) 每个原子处的 m_P
    kappa: float  # ‖m_P‖²

    @classmethod
    def build(
        cls,
        config: KernelConfig,
        x: np.ndarray,
        weights: np.ndarray,
        kx: Optional[np.ndarray] = None,
    ) -> "CenteredKernel":
        """
        构建均值零核快照

        Args:
            config: 核参数
            x: 协变量 (n, d)
            weights: 原子权重 (n, 4)
            kx: 可复用的协变量Gram

        Returns:
            CenteredKernel
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        weights = np.asarray(weights, dtype=float).reshape(x.shape[0], 4)
        if not np.all(np.isfinite(x)):
            raise KernelDomainError("non-finite covariates in support")
        if np.any(weights < 0.0):
            raise DegenerateDistributionError("negative weights in distribution")
        total = float(weights.sum())
        if abs(total - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise DegenerateDistributionError(f"weights sum to {total}, expected 1")

        if kx is None:
            kx = covariate_gram(x, x, config.sigma)
        bgram = binary_gram(config)

        # m[k, c] = Σ_j Σ_c' kx[k, j] B[c, c'] w[j, c']
        m_values = kx @ weights @ bgram
        kappa = float(np.sum(weights * m_values))
        if kappa <= KAPPA_TOLERANCE:
            raise DegenerateDistributionError(f"kappa={kappa} below tolerance")

        return cls(
            config=config,
            x=x,
            weights=weights,
            kx=kx,
            bgram=bgram,
            m_values=m_values,
            kappa=kappa,
        )

    def reweight(self, weights: np.ndarray) -> "CenteredKernel":
        """新权重下的快照, 复用协变量Gram"""
        return CenteredKernel.build(self.config, self.x, weights, kx=self.kx)

    @property
    def n(self) -> int:
        return int(self.x.shape[0])

    @property
    def support(self) -> List[Observation]:
        """4n 个原子, 顺序为 (i, c)"""
        atoms = []
        for i in range(self.n):
            for code in range(4):
                atoms.append(Observation(x=[float(v) for v in self.x[i]], a=code // 2, y=code % 2))
        return atoms

    def is_support(self, x: np.ndarray) -> bool:
        """x 是否与支撑协变量逐位一致"""
        x = np.atleast_2d(x)
        return x.shape == self.x.shape and bool(np.array_equal(x, self.x))

    def covariates_to_support(self, x: np.ndarray) -> np.ndarray:
        """协变量到支撑协变量组的Gram (k, n), 与支撑一致时复用缓存"""
        if self.is_support(x):
            return self.kx
        return covariate_gram(x, self.x, self.config.sigma)

    def embedding_at_points(self, x: np.ndarray, codes: np.ndarray) -> np.ndarray:
        """m_P 在一组点 (x_k, code_k) 上的取值"""
        codes = np.asarray(codes, dtype=int)
        rows = np.arange(codes.shape[0])
        if self.is_support(x):
            return self.m_values[rows, codes]
        m_rows = self.covariates_to_support(x) @ self.weights @ self.bgram
        return m_rows[rows, codes]

    def cross_gram(self, sample_a: Sample, sample_b: Sample) -> np.ndarray:
        """K^(P)(a_i, b_j) 矩阵"""
        base = covariate_gram(sample_a.x, sample_b.x, self.config.sigma)
        base = base * self.bgram[np.ix_(sample_a.codes, sample_b.codes)]
        m_a = self.embedding_at_points(sample_a.x, sample_a.codes)
        m_b = self.embedding_at_points(sample_b.x, sample_b.codes)
        return base - np.outer(m_a, m_b) / self.kappa

    def gram(self, sample: Sample) -> np.ndarray:
        """
        样本点上的均值零Gram矩阵 G = [K^(P)(O_i, O_j)]

        逐位对称: 协变量Gram与编码Gram均逐位对称, 外积项亦然
        """
        codes = sample.codes
        if self.is_support(sample.x):
            kss = self.kx
        else:
            kss = covariate_gram(sample.x, sample.x, self.config.sigma)
        m = self.embedding_at_points(sample.x, codes)
        return kss * self.bgram[np.ix_(codes, codes)] - np.outer(m, m) / self.kappa

    def kernel_to_support(self, o: Observation) -> np.ndarray:
        """
        K(o, atom) 对所有原子的取值

        Returns:
            (n, 4) 数组
        """
        z = embed_observation(o, self.config.binary_scale)
        kx_row = covariate_gram(z[:-2][None, :], self.x, self.config.sigma)[0]
        brow = self.bgram[o.code]
        return np.outer(kx_row, brow)

    def mean_embedding_at(self, o: Observation) -> float:
        """m_P(o) = Σ_i w_i K(o, atom_i)"""
        return float(np.sum(self.weights * self.kernel_to_support(o)))

    def evaluate(self, o: Observation, o2: Observation) -> float:
        """K^(P)(o, o') = K(o, o') - m_P(o) m_P(o') / κ"""
        base = gauss_kernel(o, o2, self.config)
        return base - self.mean_embedding_at(o) * self.mean_embedding_at(o2) / self.kappa


def mean_embedding_at(ck: CenteredKernel, o: Observation) -> float:
    """均值嵌入 m_P(o)"""
    return ck.mean_embedding_at(o)


def as_sample(sample: Union[Sample, Sequence[Observation]]) -> Sample:
    """观测列表统一转换为 Sample"""
    if isinstance(sample, Sample):
        return sample
    return Sample.from_observations(list(sample))


def compute_kappa(ck: CenteredKernel) -> float:
    """
    重新计算 κ = Σ_i Σ_j w_i w_j K(atom_i, atom_j)

    Raises:
        DegenerateDistributionError: κ 不大于容差
    """
    kappa = float(np.sum(ck.weights * (ck.kx @ ck.weights @ ck.bgram)))
    if kappa <= KAPPA_TOLERANCE:
        raise DegenerateDistributionError(f"kappa={kappa} below tolerance")
    return kappa


def centered_kernel_eval(ck: CenteredKernel, o: Observation, o2: Observation) -> float:
    """均值零核 K^(P)(o, o')"""
    return ck.evaluate(o, o2)


__all__ = [
    "KAPPA_TOLERANCE",
    "embed_observation",
    "embed_sample",
    "gauss_kernel",
    "median_heuristic",
    "covariate_gram",
    "binary_gram",
    "CenteredKernel",
    "mean_embedding_at",
    "as_sample",
    "compute_kappa",
    "centered_kernel_eval",
]
