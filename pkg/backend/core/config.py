"""
应用配置管理

优先级: 默认值 < 环境变量 < JSON配置文件 < 命令行参数
"""
import json
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Set, Union

from pydantic import Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from core.exceptions import ConfigError
from models.enums import (
    DgpId,
    InvariantMode,
    LearnerId,
    Method,
    NormalizationMode,
    StopRule,
    TargetName,
)


# JSON配置文件路径的环境变量
CONFIG_ENV_VAR = "ULFS_KDPE_CONFIG"


class KernelSettings(BaseSettings):
    """高斯核配置"""

    sigma: Union[float, Literal["median"]] = Field(
        default="median",
        description="高斯核带宽, 'median' 表示中位数启发式"
    )
    binary_scale: float = Field(default=1.0, gt=0, description="a,y坐标的缩放系数")

    model_config = SettingsConfigDict(env_prefix="ULFS_KERNEL_", extra="ignore")


class StoppingConfig(BaseSettings):
    """停止规则配置 (SC1-SC5)"""

    delta_p: float = Field(default=1e-8, gt=0, description="SC1 密度平台容差 δ_p")
    delta_s: float = Field(default=1e-8, gt=0, description="SC2 得分平台容差 δ_s")
    delta_alpha: float = Field(default=1e-8, gt=0, description="SC3 方向范数容差 δ_α")
    delta_v: float = Field(default=1e-8, gt=0, description="SC4 增量方差容差 δ_v")
    delta_ell: float = Field(default=1e-8, gt=0, description="SC4 平均改进容差 δ_ℓ")
    eif_c: float = Field(default=1.0, gt=0, description="SC5 常数 c")
    sc4_multiplier: float = Field(default=1.0, gt=0, description="SC4 中 n⁻¹ 的倍数")
    enabled: Set[StopRule] = Field(
        default_factory=lambda: {StopRule.SC1},
        description="启用的停止规则"
    )

    model_config = SettingsConfigDict(env_prefix="ULFS_STOP_", extra="ignore")


class FlowConfig(BaseSettings):
    """ULFS流配置"""

    delta: float = Field(default=0.01, ge=0, description="Euler步长 Δ (0 为恒等流, 仅用于诊断)")
    max_iters: int = Field(default=100, ge=1, description="最大迭代次数 M")
    delta_n: Optional[float] = Field(
        default=1e-6,
        gt=0,
        description="硬得分目标 δ_n, None 表示不启用"
    )
    stopping: StoppingConfig = Field(default_factory=StoppingConfig)
    mode: NormalizationMode = Field(default=NormalizationMode.GLOBAL, description="归一化模式")
    stabilize: bool = Field(default=False, description="每步后重新施加条件概率下界")
    invariant_mode: InvariantMode = Field(default=InvariantMode.RECORD, description="不变量检查模式")
    eif_target: TargetName = Field(default=TargetName.ATE, description="SC5与EIF残差诊断使用的目标")
    negate_direction: bool = Field(default=False, description="故障注入: 反转更新方向")

    model_config = SettingsConfigDict(env_prefix="ULFS_FLOW_", extra="ignore")


class NuisanceSettings(BaseSettings):
    """干扰函数学习器配置"""

    learners: List[LearnerId] = Field(
        default_factory=lambda: [LearnerId.MEAN, LearnerId.LOGISTIC, LearnerId.NW],
        description="堆叠候选学习器"
    )
    k_folds: int = Field(default=5, ge=2, description="交叉验证折数")
    nw_bandwidth: float = Field(default=0.1, gt=0, description="Nadaraya-Watson带宽")
    ridge_lambda: float = Field(default=1e-4, gt=0, description="完全分离时的岭惩罚")
    logistic_max_iter: int = Field(default=200, ge=1, description="逻辑回归最大迭代")
    logistic_tol: float = Field(default=1e-8, gt=0, description="逻辑回归梯度容差")
    eg_steps: int = Field(default=500, ge=1, description="指数梯度迭代次数")
    eg_step_size: float = Field(default=0.1, gt=0, description="指数梯度步长")
    floor: float = Field(default=1e-3, gt=0, lt=0.25, description="条件概率下界 c")

    model_config = SettingsConfigDict(env_prefix="ULFS_NUISANCE_", extra="ignore")


class SimulationSettings(BaseSettings):
    """蒙特卡洛实验配置"""

    dgp: DgpId = Field(default=DgpId.DGP1, description="数据生成过程")
    n: int = Field(default=300, ge=10, description="样本量")
    reps: int = Field(default=200, ge=1, description="重复次数 B")
    seed: int = Field(default=0, ge=0, lt=2 ** 64, description="主随机种子")
    jobs: int = Field(default=1, ge=-1, description="并行作业数 (joblib, -1 为全部核心)")
    mode: NormalizationMode = Field(default=NormalizationMode.XFIXED, description="模拟使用的归一化模式")
    methods: List[Method] = Field(
        default_factory=lambda: [Method.ULFS_KDPE, Method.INITIAL, Method.ONE_STEP, Method.TMLE_ATE],
        description="参与比较的方法"
    )
    tmle_max_fluct: int = Field(default=20, ge=0, description="TMLE最大波动次数")
    compare_rules: bool = Field(default=False, description="逐条停止规则各跑一次流")
    iteration_limits: List[int] = Field(
        default_factory=list,
        description="逐规则比较使用的迭代上限列表, 为空时取 flow.max_iters"
    )
    quadrature_nodes: int = Field(default=10 ** 6, ge=1000, description="真值积分节点数")
    output_dir: str = Field(default="results", description="结果输出目录")
    golden_dir: str = Field(default="data/golden", description="真值金标准文件目录")

    model_config = SettingsConfigDict(env_prefix="ULFS_SIM_", extra="ignore")

    @field_validator("jobs")
    @classmethod
    def _jobs_nonzero(cls, value: int) -> int:
        if value == 0:
            raise ValueError("jobs must be a positive count or -1")
        return value

    @field_validator("iteration_limits")
    @classmethod
    def _limits_positive(cls, value: List[int]) -> List[int]:
        if any(limit < 1 for limit in value):
            raise ValueError("iteration limits must be >= 1")
        return sorted(set(value))


class LogSettings(BaseSettings):
    """日志配置"""

    level: str = Field(default="INFO", description="日志级别")
    file: str = Field(default="logs/ulfs_kdpe.log", description="日志文件路径")
    to_file: bool = Field(default=True, description="是否写入日志文件")

    model_config = SettingsConfigDict(env_prefix="LOG_", extra="ignore")


class AppSettings(BaseSettings):
    """应用总配置"""

    kernel: KernelSettings = Field(default_factory=KernelSettings)
    flow: FlowConfig = Field(default_factory=FlowConfig)
    nuisance: NuisanceSettings = Field(default_factory=NuisanceSettings)
    simulation: SimulationSettings = Field(default_factory=SimulationSettings)
    log: LogSettings = Field(default_factory=LogSettings)

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore"
    )

    @classmethod
    def load(
        cls,
        config_path: Optional[str] = None,
        overrides: Optional[Dict[str, Any]] = None,
    ) -> "AppSettings":
        """
        加载配置

        Args:
            config_path: JSON配置文件路径 (为空时读取 ULFS_KDPE_CONFIG)
            overrides: 按节嵌套的覆盖项 (命令行参数)

        Returns:
            应用配置
        """
        path = config_path or os.environ.get(CONFIG_ENV_VAR)
        data: Dict[str, Any] = {}
        if path:
            path_obj = Path(path)
            if not path_obj.exists():
                raise ConfigError(f"config file not found: {path}")
            try:
                data = json.loads(path_obj.read_text(encoding="utf-8"))
            except json.JSONDecodeError as e:
                raise ConfigError(f"config file is not valid JSON: {e}") from e

        if overrides:
            data = _deep_merge(data, overrides)

        try:
            flow_data = dict(data.get("flow", {}))
            stopping = StoppingConfig(**flow_data.pop("stopping", {}))
            return cls(
                kernel=KernelSettings(**data.get("kernel", {})),
                flow=FlowConfig(**flow_data, stopping=stopping),
                nuisance=NuisanceSettings(**data.get("nuisance", {})),
                simulation=SimulationSettings(**data.get("simulation", {})),
                log=LogSettings(**data.get("log", {})),
            )
        except ValidationError as e:
            raise ConfigError(str(e)) from e


def _deep_merge(base: Dict[str, Any], extra: Dict[str, Any]) -> Dict[str, Any]:
    """递归合并字典, extra 优先"""
    merged = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


# 全局配置实例 (仅默认值与环境变量)
settings = AppSettings()


# 导出配置
__all__ = [
    "CONFIG_ENV_VAR",
    "KernelSettings",
    "StoppingConfig",
    "FlowConfig",
    "NuisanceSettings",
    "SimulationSettings",
    "LogSettings",
    "AppSettings",
    "settings",
]
