"""
离散工作密度 p̂_t

支撑为 4n 个经验原子 {(X_i, a, y) : i=1..n, a∈{0,1}, y∈{0,1}},
权重按 (i, c = 2a + y) 存为 (n, 4) 矩阵。
所有更新均为乘法更新, 正值权重映射为正值权重。
"""
from dataclasses import dataclass, replace
from typing import List, Optional, Protocol

import numpy as np

from core.exceptions import (
    DegenerateConditionalError,
    InitializationError,
    PositivityViolationError,
    SupportLookupError,
)
from core.sample import Sample
from models.enums import NormalizationMode
from models.schemas import DensitySnapshot, Observation
from utils.logger import logger


class NuisancePredictor(Protocol):
    """初始化密度所需的干扰函数接口"""

    def propensity(self, x: np.ndarray) -> np.ndarray:
        """P(A=1 | X=x)"""
        ...

    def outcome(self, x: np.ndarray, a: int) -> np.ndarray:
        """P(Y=1 | A=a, X=x)"""
        ...


@dataclass(frozen=True)
class WorkingDensity:
    """工作密度 (不可变值, 更新生成新实例)"""

    x: np.ndarray  # (n, d) 协变量组
    weights: np.ndarray  # (n, 4)
    mode: NormalizationMode
    floor: float

    @property
    def n(self) -> int:
        return int(self.x.shape[0])

    @property
    def atoms(self) -> List[Observation]:
        """4n 个原子, 顺序为 (i, c)"""
        return [
            Observation(x=[float(v) for v in self.x[i]], a=code // 2, y=code % 2)
            for i in range(self.n)
            for code in range(4)
        ]

    @property
    def x_group(self) -> np.ndarray:
        """原子到协变量组的索引映射"""
        return np.repeat(np.arange(self.n), 4)

    def with_weights(self, weights: np.ndarray) -> "WorkingDensity":
        return replace(self, weights=np.asarray(weights, dtype=float))


def group_mass(d: WorkingDensity) -> np.ndarray:
    """每个协变量组的质量 P_X(X_i)"""
    return d.weights.sum(axis=1)


def normalization_error(d: WorkingDensity, mode: Optional[NormalizationMode] = None) -> float:
    """
    归一化误差

    global: |Σ w - 1|; xfixed: max_i |P_X(X_i) - 1/n|
    """
    mode = NormalizationMode(mode or d.mode)
    if mode == NormalizationMode.GLOBAL:
        return float(abs(d.weights.sum() - 1.0))
    return float(np.max(np.abs(group_mass(d) - 1.0 / d.n)))


def propensity(d: WorkingDensity, a: int) -> np.ndarray:
    """密度蕴含的倾向得分 g_a(X_i)"""
    arm = d.weights[:, 2 * a] + d.weights[:, 2 * a + 1]
    return arm / group_mass(d)


def outcome_regression(d: WorkingDensity, a: int) -> np.ndarray:
    """
    密度蕴含的结局回归 Q̄(a, X_i) 对所有 i

    Raises:
        DegenerateConditionalError: 分母为零
    """
    denom = d.weights[:, 2 * a] + d.weights[:, 2 * a + 1]
    if np.any(denom <= 0.0):
        raise DegenerateConditionalError(f"zero mass in arm a={a}")
    return d.weights[:, 2 * a + 1] / denom


def conditional_outcome_mean(d: WorkingDensity, a: int, i: int) -> float:
    """
    Q̄(a, X_i) = w(i,a,1) / (w(i,a,0) + w(i,a,1))

    Raises:
        DegenerateConditionalError: 分母为零
    """
    w0 = d.weights[i, 2 * a]
    w1 = d.weights[i, 2 * a + 1]
    if w0 + w1 <= 0.0:
        raise DegenerateConditionalError(f"zero mass at group {i}, arm a={a}")
    return float(w1 / (w0 + w1))


def _factorized_weights(
    mass: np.ndarray,
    e1: np.ndarray,
    q1_by_arm: List[np.ndarray],
) -> np.ndarray:
    """按 p_X · e(a|x) · q(y|a,x) 组装 (n, 4) 权重"""
    e_by_arm = [1.0 - e1, e1]
    weights = np.empty((mass.shape[0], 4))
    for a in (0, 1):
        weights[:, 2 * a] = mass * e_by_arm[a] * (1.0 - q1_by_arm[a])
        weights[:, 2 * a + 1] = mass * e_by_arm[a] * q1_by_arm[a]
    return weights


def renormalize(d: WorkingDensity, mode: NormalizationMode = None) -> WorkingDensity:
    """
    重新归一化

    global: 权重除以总和
    xfixed: 每个协变量组的4个权重缩放到和为 1/n

    Raises:
        PositivityViolationError: 存在非正权重
    """
    mode = NormalizationMode(mode or d.mode)
    weights = d.weights
    if np.any(~np.isfinite(weights)) or np.any(weights <= 0.0):
        raise PositivityViolationError("renormalize requires strictly positive weights")

    if mode == NormalizationMode.GLOBAL:
        new_weights = weights / weights.sum()
    else:
        new_weights = weights / (d.n * weights.sum(axis=1, keepdims=True))
    return replace(d, weights=new_weights, mode=mode)


def needs_stabilization(d: WorkingDensity) -> bool:
    """倾向得分或结局条件概率是否越出 [floor, 1-floor]"""
    lo, hi = d.floor, 1.0 - d.floor
    values = [propensity(d, 1)] + [outcome_regression(d, a) for a in (0, 1)]
    return any(np.any((v < lo) | (v > hi)) for v in values)


def stabilize(d: WorkingDensity) -> WorkingDensity:
    """
    密度稳定化: 将倾向得分与结局条件概率截断到 [floor, 1-floor]

    组质量保持不变
    """
    lo, hi = d.floor, 1.0 - d.floor
    e1 = np.clip(propensity(d, 1), lo, hi)
    q1_by_arm = [np.clip(outcome_regression(d, a), lo, hi) for a in (0, 1)]
    return replace(d, weights=_factorized_weights(group_mass(d), e1, q1_by_arm))


def init_from_nuisance(
    xs: np.ndarray,
    fit: NuisancePredictor,
    floor: float,
    mode: NormalizationMode,
) -> WorkingDensity:
    """
    由干扰函数初始化工作密度

    公式: w(i,a,y) = (1/n) · ê(a|X_i) · q̂(y|a,X_i), 条件概率截断到 [floor, 1-floor]

    Args:
        xs: 协变量 (n, d)
        fit: 干扰函数拟合结果
        floor: 条件概率下界 c
        mode: 归一化模式

    Returns:
        工作密度

    Raises:
        InitializationError: n < 2、floor 非法或预测值非有限
    """
    xs = np.asarray(xs, dtype=float)
    if xs.ndim == 1:
        xs = xs[:, None]
    n = xs.shape[0]
    if n < 2:
        raise InitializationError(f"need at least 2 covariate points, got {n}")
    if not (0.0 < floor < 0.25):
        raise InitializationError(f"floor must lie in (0, 0.25), got {floor}")

    e1 = np.asarray(fit.propensity(xs), dtype=float)
    q1_by_arm = [np.asarray(fit.outcome(xs, a), dtype=float) for a in (0, 1)]
    if not np.all(np.isfinite(e1)) or not all(np.all(np.isfinite(q)) for q in q1_by_arm):
        raise InitializationError("non-finite nuisance predictions")

    lo, hi = floor, 1.0 - floor
    clipped = int(np.sum((e1 < lo) | (e1 > hi)))
    e1 = np.clip(e1, lo, hi)
    q1_by_arm = [np.clip(q, lo, hi) for q in q1_by_arm]

    mass = np.full(n, 1.0 / n)
    density = WorkingDensity(
        x=xs,
        weights=_factorized_weights(mass, e1, q1_by_arm),
        mode=NormalizationMode(mode),
        floor=floor,
    )
    density = renormalize(density, mode)

    logger.info(
        f"工作密度初始化完成 - n: {n}, 原子数: {4 * n}, 模式: {density.mode.value}, "
        f"下界: {floor}, 截断倾向得分数: {clipped}"
    )
    return density


def log_density_at_sample(d: WorkingDensity, sample: Sample) -> np.ndarray:
    """
    观测原子处的对数密度, 加上 log(n) 使其与条件对数密度可比

    Raises:
        SupportLookupError: 样本点不在支撑上
    """
    if sample.n != d.n or sample.x.shape != d.x.shape or not np.array_equal(sample.x, d.x):
        raise SupportLookupError("sample covariates do not match the density support")
    values = d.weights[np.arange(d.n), sample.codes]
    return np.log(values) + np.log(d.n)


def to_snapshot(d: WorkingDensity) -> DensitySnapshot:
    """序列化为JSON快照"""
    return DensitySnapshot(
        mode=d.mode,
        floor=d.floor,
        atoms=d.atoms,
        weights=[float(w) for w in d.weights.ravel()],
    )


def from_snapshot(snapshot: DensitySnapshot) -> WorkingDensity:
    """
    由JSON快照恢复工作密度

    Raises:
        SupportLookupError: 原子排列不是 (i, c) 的规范顺序
    """
    atoms = snapshot.atoms
    if len(atoms) % 4 != 0 or len(atoms) != len(snapshot.weights):
        raise SupportLookupError("snapshot atoms must come in groups of four with one weight each")

    n = len(atoms) // 4
    for k, atom in enumerate(atoms):
        if atom.code != k % 4 or atom.x != atoms[4 * (k // 4)].x:
            raise SupportLookupError(f"atom {k} is out of canonical order")

    x = np.array([atoms[4 * i].x for i in range(n)], dtype=float)
    weights = np.array(snapshot.weights, dtype=float).reshape(n, 4)
    return WorkingDensity(x=x, weights=weights, mode=snapshot.mode, floor=snapshot.floor)


__all__ = [
    "NuisancePredictor",
    "WorkingDensity",
    "group_mass",
    "normalization_error",
    "propensity",
    "outcome_regression",
    "conditional_outcome_mean",
    "renormalize",
    "needs_stabilization",
    "stabilize",
    "init_from_nuisance",
    "log_density_at_sample",
    "to_snapshot",
    "from_snapshot",
]
