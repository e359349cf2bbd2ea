"""
Pydantic数据模型定义
"""
from datetime import datetime
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

from core.exceptions import UndefinedTargetError
from models.enums import InvariantName, Method, NormalizationMode, StopRule, TargetName


# ==================== 基础类型 ====================

class Observation(BaseModel):
    """单个观测 O = (X, A, Y)"""

    x: List[float] = Field(..., min_length=1, description="连续协变量")
    a: Literal[0, 1] = Field(..., description="二值处理")
    y: Literal[0, 1] = Field(..., description="二值结局")

    model_config = ConfigDict(frozen=True)

    @property
    def code(self) -> int:
        """(a, y) 的原子编码 2a + y"""
        return 2 * self.a + self.y


class KernelConfig(BaseModel):
    """已解析的高斯核参数"""

    sigma: float = Field(..., gt=0, description="带宽 σ")
    binary_scale: float = Field(1.0, gt=0, description="a,y坐标缩放")

    model_config = ConfigDict(frozen=True)


class TargetEstimates(BaseModel):
    """目标参数估计 (同一分布同时给出)"""

    mu0: float = Field(..., description="μ_0")
    mu1: float = Field(..., description="μ_1")
    ate: float = Field(..., description="ψ_ATE = μ1 - μ0")
    rr: float = Field(..., description="ψ_RR = μ1 / μ0")
    or_: float = Field(..., alias="or", description="ψ_OR")

    model_config = ConfigDict(populate_by_name=True, frozen=True)

    @classmethod
    def from_means(cls, mu0: float, mu1: float) -> "TargetEstimates":
        """
        由 (μ0, μ1) 计算三个目标参数

        Raises:
            UndefinedTargetError: μ0 ∈ {0,1} 或 μ1 = 1 时RR/OR无定义
        """
        if not (0.0 < mu0 < 1.0) or not (0.0 <= mu1 < 1.0):
            raise UndefinedTargetError(f"RR/OR undefined at mu0={mu0}, mu1={mu1}")
        odds1 = mu1 / (1.0 - mu1)
        odds0 = mu0 / (1.0 - mu0)
        return cls(mu0=mu0, mu1=mu1, ate=mu1 - mu0, rr=mu1 / mu0, or_=odds1 / odds0)

    def get(self, which: TargetName) -> float:
        """按目标名取值"""
        return {
            TargetName.ATE: self.ate,
            TargetName.RR: self.rr,
            TargetName.OR: self.or_,
        }[TargetName(which)]


# ==================== 流与停止规则 ====================

class StopDecision(BaseModel):
    """停止规则判定结果"""

    fired: bool = Field(False, description="是否触发")
    rule: Optional[StopRule] = Field(None, description="触发的规则")
    diagnostics: Dict[str, Optional[float]] = Field(default_factory=dict, description="诊断量")


class IterationRecord(BaseModel):
    """单次迭代的流诊断"""

    iteration: int = Field(..., description="迭代序号 m")
    t: float = Field(..., description="流时间 t = mΔ")
    score: float = Field(..., description="s_t = (1/n)Σα²")
    loglik: float = Field(..., description="P_n[log p̂_t]")
    mean_alpha: float = Field(..., description="mean(α) = ‖m_n‖²")
    direction_mass: float = Field(..., description="P_t[D]")
    mass_drift: Optional[float] = Field(None, description="归一化前的质量漂移")
    eif_mean: Optional[float] = Field(None, description="P_n[EIF]")
    diagnostics: Dict[str, Optional[float]] = Field(default_factory=dict, description="SC诊断量")


class InvariantCheck(BaseModel):
    """单次不变量检查"""

    name: InvariantName
    iteration: int
    passed: bool
    value: float
    bound: float


class InvariantSummary(BaseModel):
    """单个不变量的汇总 (诊断表的一行)"""

    name: InvariantName
    passed: bool
    checks: int
    failures: int
    first_failure_iteration: Optional[int] = None
    worst_value: Optional[float] = None


class FlowTraceReport(BaseModel):
    """流轨迹报告 (可序列化)"""

    iterations: int = Field(..., description="执行的Euler步数")
    stop_reason: StopRule = Field(..., description="停止原因")
    converged: bool = Field(..., description="是否在迭代上限前停止")
    final_t: float = Field(..., description="最终流时间")
    wall_time: float = Field(..., description="耗时(秒)")
    records: List[IterationRecord] = Field(default_factory=list)
    invariants: List[InvariantSummary] = Field(default_factory=list)


# ==================== 密度持久化 ====================

class DensitySnapshot(BaseModel):
    """工作密度的JSON快照"""

    mode: NormalizationMode
    floor: float
    atoms: List[Observation]
    weights: List[float]
    saved_at: datetime = Field(default_factory=datetime.now)


# ==================== 基线与模拟 ====================

class BaselineResult(BaseModel):
    """对照估计器结果"""

    method: Method
    estimates: Dict[TargetName, float] = Field(default_factory=dict)
    iterations: int = 0
    converged: bool = True
    detail: Optional[str] = None


class ReplicateEstimate(BaseModel):
    """单次重复中某方法对某参数的估计"""

    method: Method
    parameter: TargetName
    stopping_rule: str = "-"
    max_iters: Optional[int] = Field(default=None, description="产生该估计的流的迭代上限, 对照估计器为空")
    stop_reason: Optional[StopRule] = None
    estimate: Optional[float] = None
    converged: bool = False


class ReplicateReport(BaseModel):
    """单次蒙特卡洛重复"""

    replicate: int
    seed: int
    estimates: List[ReplicateEstimate] = Field(default_factory=list)
    stop_reason: Optional[StopRule] = None
    iterations: Optional[int] = None
    flow_runs: int = 0
    eif_mean_initial: Optional[float] = None
    eif_mean_final: Optional[float] = None
    error: Optional[str] = None
    wall_time: float = 0.0


class SimulationSummary(BaseModel):
    """按 (方法, 参数, 停止规则) 汇总的模拟结果"""

    dgp: str
    method: Method
    parameter: TargetName
    stopping_rule: str = "-"
    max_iters: Optional[int] = None
    n_converged: int
    n_used: int
    truth: float
    bias_x100: float
    var: float
    rmse: float
    replicates: List[float] = Field(default_factory=list)
    replicate_ids: List[int] = Field(default_factory=list)


class GoldenTruth(BaseModel):
    """真值金标准文件"""

    dgp: str
    nodes: int
    targets: TargetEstimates
    generated_at: datetime = Field(default_factory=datetime.now)


# ==================== 命令行报告 ====================

class EstimateReport(BaseModel):
    """estimate 命令的输出"""

    targets: TargetEstimates
    stop_reason: StopRule
    iterations: int
    kernel: KernelConfig
    learner_id: str
    trace: FlowTraceReport
    density: DensitySnapshot
    generated_at: datetime = Field(default_factory=datetime.now)


class DiagnoseReport(BaseModel):
    """diagnose 命令的输出"""

    passed: bool
    invariants: List[InvariantSummary]
    stop_reason: StopRule
    iterations: int
    generated_at: datetime = Field(default_factory=datetime.now)


# ==================== 导出 ====================

__all__ = [
    "Observation",
    "KernelConfig",
    "TargetEstimates",
    "StopDecision",
    "IterationRecord",
    "InvariantCheck",
    "InvariantSummary",
    "FlowTraceReport",
    "DensitySnapshot",
    "BaselineResult",
    "ReplicateEstimate",
    "ReplicateReport",
    "SimulationSummary",
    "GoldenTruth",
    "EstimateReport",
    "DiagnoseReport",
]
