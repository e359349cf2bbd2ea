"""
ULFS-KDPE 流引擎

每次迭代:
    1. 以当前密度构建均值零核 K^(t), 得到样本Gram G^(t)
    2. α = (1/n) G 𝟙, s_t = (1/n) Σ α²
    3. D(o) = (1/n) Σ_j α_j K^(t)(o, O_j), 在全部 4n 个原子上求值
    4. 指数倾斜 w' = w · exp(Δ D), 按模式重新归一化
"""
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from core.config import FlowConfig
from core.density import (
    WorkingDensity,
    log_density_at_sample,
    needs_stabilization,
    normalization_error,
    renormalize,
    stabilize,
)
from core.exceptions import (
    DegenerateConditionalError,
    InvariantViolationError,
    PropensityError,
    StepSizeError,
    UndefinedTargetError,
)
from core.kernel import CenteredKernel, as_sample, covariate_gram
from core.sample import Sample
from core.stopping import evaluate_stopping
from core.targets import eif_target
from models.enums import InvariantMode, InvariantName, NormalizationMode, StopRule
from models.schemas import (
    FlowTraceReport,
    InvariantCheck,
    InvariantSummary,
    IterationRecord,
    KernelConfig,
    Observation,
)
from utils.logger import logger


# exp 的安全指数上限
MAX_EXPONENT = 700.0

# 不变量容差
SCORE_TOLERANCE = 1e-12
EMBEDDING_TOLERANCE = 1e-10
CENTERING_TOLERANCE = 1e-8
LYAPUNOV_TOLERANCE = 1e-9
# 高斯核下 ‖D‖∞ <= C² = 1
DIRECTION_BOUND = 1.0
# 归一化后的质量误差
NORMALIZATION_TOLERANCE = {
    NormalizationMode.GLOBAL: 1e-12,
    NormalizationMode.XFIXED: 1e-10,
}


# ==================== 单步计算 ====================

def centered_gram(ck: CenteredKernel, sample) -> np.ndarray:
    """样本点上的均值零Gram矩阵 G^(t)"""
    return ck.gram(as_sample(sample))


def compute_alpha(gram: np.ndarray) -> np.ndarray:
    """
    系数向量 α = (1/n) G 𝟙

    α_j 等于经验均值嵌入 m_n^(t)(O_j)
    """
    gram = np.asarray(gram, dtype=float)
    n = gram.shape[0]
    return gram @ np.ones(n) / n


def empirical_score(alpha: np.ndarray) -> float:
    """Lyapunov得分 s_t = (1/n) Σ α_j²"""
    alpha = np.asarray(alpha, dtype=float)
    return float(np.mean(alpha ** 2))


def direction_at(ck: CenteredKernel, alpha: np.ndarray, sample, o: Observation) -> float:
    """D(o) = (1/n) Σ_j α_j K^(t)(o, O_j)"""
    sample = as_sample(sample)
    alpha = np.asarray(alpha, dtype=float)
    row = ck.cross_gram(Sample.from_observations([o]), sample)[0]
    return float(row @ alpha) / sample.n


def direction_on_atoms(ck: CenteredKernel, alpha: np.ndarray, sample) -> np.ndarray:
    """
    D 在全部支撑原子上的取值

    公式: D(i,c) = (1/n)[Σ_j α_j kx(i,j) B(c, c_j) - m(i,c) Σ_j α_j m(O_j) / κ]

    Returns:
        (n_support, 4) 数组
    """
    sample = as_sample(sample)
    alpha = np.asarray(alpha, dtype=float)
    n = sample.n

    # α 按样本编码展开为 (n, 4)
    spread = np.zeros((n, 4))
    spread[np.arange(n), sample.codes] = alpha

    k_support = ck.covariates_to_support(sample.x).T  # (n_support, n)
    base = k_support @ spread @ ck.bgram
    m_sample = ck.embedding_at_points(sample.x, sample.codes)
    projection = ck.m_values * float(m_sample @ alpha) / ck.kappa
    return (base - projection) / n


def embedding_norm_sq(ck: CenteredKernel, sample) -> float:
    """
    ‖m_n‖² = (1/n²) Σ_ij K^(t)(O_i, O_j), 按编码分组求和

    与 mean(α) 走不同的求和路径, 用于恒等式检查
    """
    sample = as_sample(sample)
    onehot = np.eye(4)[sample.codes]  # (n, 4)
    if ck.is_support(sample.x):
        kss = ck.kx
    else:
        kss = covariate_gram(sample.x, sample.x, ck.config.sigma)
    base = float(np.sum((onehot.T @ kss @ onehot) * ck.bgram))
    m_sum = float(np.sum(ck.embedding_at_points(sample.x, sample.codes)))
    return (base - m_sum ** 2 / ck.kappa) / sample.n ** 2


# ==================== 流状态 ====================

@dataclass(frozen=True)
class FlowState:
    """单次迭代的流状态"""

    iteration: int
    t: float
    density: WorkingDensity
    sample: Sample
    ck: CenteredKernel
    gram: np.ndarray
    alpha: np.ndarray
    score: float
    direction: np.ndarray  # (n, 4) 原子上的 D
    log_density: np.ndarray  # (n,) 观测原子处的 log p̂_t
    loglik: float
    mass_drift: Optional[float] = None
    clamped: bool = False

    @property
    def direction_mass(self) -> float:
        """P_t[D]"""
        return float(np.sum(self.density.weights * self.direction))


def build_state(
    density: WorkingDensity,
    sample: Sample,
    kernel_config: KernelConfig,
    iteration: int = 0,
    t: float = 0.0,
    kx: Optional[np.ndarray] = None,
    mass_drift: Optional[float] = None,
    clamped: bool = False,
) -> FlowState:
    """由工作密度构建流状态 (重建均值零核)"""
    ck = CenteredKernel.build(kernel_config, density.x, density.weights, kx=kx)
    gram = ck.gram(sample)
    alpha = compute_alpha(gram)
    log_density = log_density_at_sample(density, sample)
    return FlowState(
        iteration=iteration,
        t=t,
        density=density,
        sample=sample,
        ck=ck,
        gram=gram,
        alpha=alpha,
        score=empirical_score(alpha),
        direction=direction_on_atoms(ck, alpha, sample),
        log_density=log_density,
        loglik=float(np.mean(log_density)),
        mass_drift=mass_drift,
        clamped=clamped,
    )


def euler_step(state: FlowState, cfg: FlowConfig) -> FlowState:
    """
    显式Euler步: w' = w · exp(Δ D), 之后按模式重新归一化

    Raises:
        StepSizeError: max|Δ D| 超过 700
        PositivityViolationError: 归一化前出现非正权重
    """
    direction = -state.direction if cfg.negate_direction else state.direction
    exponent = cfg.delta * direction
    worst = float(np.max(np.abs(exponent)))
    if worst > MAX_EXPONENT:
        raise StepSizeError(f"max |delta * D| = {worst:.3g} exceeds {MAX_EXPONENT}")

    tilted = state.density.weights * np.exp(exponent)
    mass_drift = float(tilted.sum() - 1.0)
    density = renormalize(state.density.with_weights(tilted), cfg.mode)

    clamped = False
    if cfg.stabilize and needs_stabilization(density):
        density = stabilize(density)
        clamped = True

    return build_state(
        density,
        state.sample,
        state.ck.config,
        iteration=state.iteration + 1,
        t=state.t + cfg.delta,
        kx=state.ck.kx,
        mass_drift=mass_drift,
        clamped=clamped,
    )


# ==================== 不变量监控 ====================

class InvariantMonitor:
    """流不变量监控器

    off 不检查; record 记录并告警; raise 违反即抛出 InvariantViolationError
    """

    def __init__(self, mode: InvariantMode = InvariantMode.RECORD):
        self.mode = InvariantMode(mode)
        self.checks: List[InvariantCheck] = []

    def check(self, name: InvariantName, iteration: int, value: float, bound: float) -> bool:
        """记录一次检查 value <= bound"""
        if self.mode == InvariantMode.OFF:
            return True

        passed = bool(value <= bound)
        self.checks.append(
            InvariantCheck(name=name, iteration=iteration, passed=passed, value=value, bound=bound)
        )
        if not passed:
            detail = f"value={value:.3e}, bound={bound:.3e}"
            if self.mode == InvariantMode.RAISE:
                raise InvariantViolationError(name.value, iteration, detail)
            logger.warning(f"不变量违反 - {name.value}, 迭代: {iteration}, {detail}")
        return passed

    def check_state(self, state: FlowState) -> None:
        """单个状态上的不变量"""
        m = state.iteration
        mean_alpha = float(np.mean(state.alpha))

        self.check(InvariantName.SCORE_NONNEGATIVE, m, -state.score, SCORE_TOLERANCE)
        self.check(
            InvariantName.SCORE_EMBEDDING_BOUND, m,
            mean_alpha ** 2 - state.score, SCORE_TOLERANCE,
        )
        self.check(
            InvariantName.EMBEDDING_NORM_IDENTITY, m,
            abs(mean_alpha - embedding_norm_sq(state.ck, state.sample)), EMBEDDING_TOLERANCE,
        )
        self.check(InvariantName.CENTERED_DIRECTION, m, abs(state.direction_mass), CENTERING_TOLERANCE)
        self.check(
            InvariantName.DIRECTION_BOUND, m,
            float(np.max(np.abs(state.direction))), DIRECTION_BOUND + SCORE_TOLERANCE,
        )

    def check_step(self, prev: FlowState, curr: FlowState, delta: float) -> None:
        """相邻两次迭代之间的不变量"""
        m = curr.iteration
        if curr.mass_drift is not None:
            # |Σ w e^{ΔD} - 1| <= Δ² e^Δ, 因 P_t[D] = 0 且 |D| <= 1
            bound = delta ** 2 * np.exp(delta) + SCORE_TOLERANCE
            self.check(InvariantName.MASS_CONSERVATION, m, abs(curr.mass_drift), bound)

        self.check(
            InvariantName.MASS_NORMALIZATION, m,
            normalization_error(curr.density),
            NORMALIZATION_TOLERANCE[NormalizationMode(curr.density.mode)],
        )

        # 截断步不满足单调性前提
        if not curr.clamped:
            tolerance = LYAPUNOV_TOLERANCE * (1.0 + abs(prev.loglik))
            self.check(InvariantName.LYAPUNOV_MONOTONICITY, m, prev.loglik - curr.loglik, tolerance)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def summary(self) -> List[InvariantSummary]:
        """按不变量汇总 (诊断表)"""
        rows = []
        for name in InvariantName:
            checks = [c for c in self.checks if c.name == name]
            failures = [c for c in checks if not c.passed]
            rows.append(
                InvariantSummary(
                    name=name,
                    passed=not failures,
                    checks=len(checks),
                    failures=len(failures),
                    first_failure_iteration=failures[0].iteration if failures else None,
                    worst_value=max((c.value for c in checks), default=None),
                )
            )
        return rows


# ==================== 主循环 ====================

@dataclass
class FlowTrace:
    """流轨迹: 逐迭代诊断 + 最终状态 + 停止原因"""

    records: List[IterationRecord]
    initial_state: FlowState
    final_state: FlowState
    stop_reason: StopRule
    wall_time: float
    invariants: List[InvariantSummary] = field(default_factory=list)
    eif_mean_initial: Optional[float] = None
    eif_mean_final: Optional[float] = None

    @property
    def iterations(self) -> int:
        """执行的Euler步数"""
        return self.final_state.iteration

    @property
    def converged(self) -> bool:
        return self.stop_reason != StopRule.MAX_ITERS

    @property
    def final_density(self) -> WorkingDensity:
        return self.final_state.density

    @property
    def invariants_passed(self) -> bool:
        return all(row.passed for row in self.invariants)

    def to_report(self) -> FlowTraceReport:
        return FlowTraceReport(
            iterations=self.iterations,
            stop_reason=self.stop_reason,
            converged=self.converged,
            final_t=self.final_state.t,
            wall_time=self.wall_time,
            records=self.records,
            invariants=self.invariants,
        )


def _eif_or_none(state: FlowState, cfg: FlowConfig) -> Optional[np.ndarray]:
    """当前密度下的EIF, 不可用时返回 None"""
    try:
        return eif_target(state.density, state.sample, cfg.eif_target)
    except (PropensityError, UndefinedTargetError, DegenerateConditionalError):
        return None


def _record(
    state: FlowState,
    eif: Optional[np.ndarray],
    diagnostics: Dict[str, Optional[float]],
) -> IterationRecord:
    return IterationRecord(
        iteration=state.iteration,
        t=state.t,
        score=state.score,
        loglik=state.loglik,
        mean_alpha=float(np.mean(state.alpha)),
        direction_mass=state.direction_mass,
        mass_drift=state.mass_drift,
        eif_mean=None if eif is None else float(np.mean(eif)),
        diagnostics=diagnostics,
    )


def run_flow(
    initial: WorkingDensity,
    sample,
    cfg: FlowConfig,
    kernel_config: KernelConfig,
) -> FlowTrace:
    """
    运行 ULFS-KDPE 流

    对 m = 0..M-1 判定停止规则 (硬得分目标优先, 其余按 SC3 > SC2 > SC1 > SC4 > SC5),
    未触发则执行Euler步; 执行满 M 步时停止原因为 max_iters

    Args:
        initial: 初始工作密度
        sample: 观测样本 (与密度支撑对齐)
        cfg: 流配置
        kernel_config: 已解析的核参数

    Returns:
        FlowTrace

    Raises:
        StepSizeError / PositivityViolationError / DegenerateDistributionError: 数值失败
        InvariantViolationError: raise 模式下不变量违反
    """
    sample = as_sample(sample)
    started = time.perf_counter()
    monitor = InvariantMonitor(cfg.invariant_mode)

    logger.info(
        f"流开始 - n: {sample.n}, Δ: {cfg.delta}, M: {cfg.max_iters}, "
        f"模式: {cfg.mode.value}, 规则: {sorted(r.value for r in cfg.stopping.enabled)}"
    )

    state = build_state(initial, sample, kernel_config)
    initial_state = state
    monitor.check_state(state)

    records: List[IterationRecord] = []
    prev_state: Optional[FlowState] = None
    prev_delta_p: Optional[float] = None
    eif_prev: Optional[np.ndarray] = None
    eif_initial: Optional[np.ndarray] = None
    stop_reason = StopRule.MAX_ITERS

    for m in range(cfg.max_iters + 1):
        eif_curr = _eif_or_none(state, cfg)
        if m == 0:
            eif_initial = eif_curr

        if m == cfg.max_iters:
            records.append(_record(state, eif_curr, {}))
            break

        decision, diagnostics = evaluate_stopping(
            cfg.stopping,
            ck=state.ck,
            alpha=state.alpha,
            sample=sample,
            score=state.score,
            prev_score=None if prev_state is None else prev_state.score,
            curr_log=state.log_density,
            prev_log=None if prev_state is None else prev_state.log_density,
            prev_delta_p=prev_delta_p,
            initial_log=initial_state.log_density,
            eif_curr=eif_curr,
            eif_prev=eif_prev,
            gram=state.gram,
        )
        records.append(_record(state, eif_curr, diagnostics))
        logger.debug(
            f"迭代 {m} - s_t: {state.score:.3e}, loglik: {state.loglik:.6f}, "
            f"P_t[D]: {state.direction_mass:.2e}"
        )

        if cfg.delta_n is not None and state.score <= cfg.delta_n:
            stop_reason = StopRule.SCORE_TARGET
            break
        if decision.fired:
            stop_reason = decision.rule
            break

        next_state = euler_step(state, cfg)
        monitor.check_step(state, next_state, cfg.delta)
        monitor.check_state(next_state)

        prev_delta_p = diagnostics.get("delta_p")
        prev_state, state = state, next_state
        eif_prev = eif_curr

    eif_final = _eif_or_none(state, cfg)
    wall_time = time.perf_counter() - started
    trace = FlowTrace(
        records=records,
        initial_state=initial_state,
        final_state=state,
        stop_reason=stop_reason,
        wall_time=wall_time,
        invariants=monitor.summary(),
        eif_mean_initial=None if eif_initial is None else float(np.mean(eif_initial)),
        eif_mean_final=None if eif_final is None else float(np.mean(eif_final)),
    )

    logger.info(
        f"流结束 - 原因: {stop_reason.value}, 迭代: {trace.iterations}, "
        f"s_t: {initial_state.score:.3e} -> {state.score:.3e}, 耗时: {wall_time:.2f}s"
    )
    return trace


__all__ = [
    "MAX_EXPONENT",
    "centered_gram",
    "compute_alpha",
    "empirical_score",
    "direction_at",
    "direction_on_atoms",
    "embedding_norm_sq",
    "FlowState",
    "build_state",
    "euler_step",
    "InvariantMonitor",
    "FlowTrace",
    "run_flow",
]
