"""
估计流水线服务
读取观测CSV -> 拟合干扰函数 -> 初始化工作密度 -> 运行流 -> plug-in估计
"""
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from core.config import AppSettings, FlowConfig, KernelSettings
from core.density import WorkingDensity, init_from_nuisance, to_snapshot
from core.exceptions import InputDataError
from core.flow import FlowTrace, run_flow
from core.kernel import median_heuristic
from core.sample import Sample
from core.targets import estimate_targets
from models.enums import InvariantMode
from models.schemas import DiagnoseReport, EstimateReport, KernelConfig, TargetEstimates
from services.nuisance_service import NuisanceFit, fit_nuisance
from utils.logger import logger


# ==================== 输入 ====================

def _expected_columns(n_columns: int):
    return [f"x{k}" for k in range(1, n_columns - 1)] + ["a", "y"]


def load_sample_csv(path) -> Sample:
    """
    读取观测CSV (表头 x1..xd,a,y)

    行号从1开始计, 表头为第1行

    Raises:
        InputDataError: 文件缺失、格式错误或 a/y 非二值 (附行号)
    """
    path = Path(path)
    if not path.exists():
        raise InputDataError(f"input file not found: {path}")

    try:
        frame = pd.read_csv(path, dtype=str, skip_blank_lines=False)
    except pd.errors.EmptyDataError as e:
        raise InputDataError("empty input file", line=1) from e
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        raise InputDataError(str(e), line=int(match.group(1)) if match else None) from e

    columns = [str(c).strip() for c in frame.columns]
    if len(columns) < 3 or columns != _expected_columns(len(columns)):
        raise InputDataError(
            f"header must be x1..xd,a,y with d >= 1, got {','.join(columns)}", line=1
        )
    if frame.empty:
        raise InputDataError("no data rows", line=2)

    values = frame.apply(lambda col: pd.to_numeric(col.str.strip(), errors="coerce"))
    for row in range(len(values)):
        line = row + 2
        record = values.iloc[row]
        if record.isna().any():
            bad = record.index[record.isna()][0]
            raise InputDataError(f"malformed value in column '{bad}'", line=line)
        if not np.all(np.isfinite(record.to_numpy(dtype=float))):
            raise InputDataError("non-finite value", line=line)
        for column in ("a", "y"):
            if record[column] not in (0, 1):
                raise InputDataError(f"{column} must be 0 or 1, got {frame.iloc[row][column]}", line=line)

    x_columns = columns[:-2]
    sample = Sample(
        x=values[x_columns].to_numpy(dtype=float),
        a=values["a"].to_numpy(dtype=int),
        y=values["y"].to_numpy(dtype=int),
    )
    logger.info(f"读取观测数据 - 文件: {path}, n: {sample.n}, d: {sample.d}")
    return sample


# ==================== 估计 ====================

def resolve_kernel_config(sample: Sample, kernel: KernelSettings) -> KernelConfig:
    """解析核带宽 (数值或中位数启发式)"""
    if kernel.sigma == "median":
        sigma = median_heuristic(sample, kernel.binary_scale)
    else:
        sigma = float(kernel.sigma)
    return KernelConfig(sigma=sigma, binary_scale=kernel.binary_scale)


@dataclass
class EstimationResult:
    """单次ULFS-KDPE估计的全部产物"""

    sample: Sample
    kernel: KernelConfig
    nuisance: NuisanceFit
    initial_density: WorkingDensity
    trace: FlowTrace
    targets: TargetEstimates

    @property
    def final_density(self) -> WorkingDensity:
        return self.trace.final_density

    def to_report(self) -> EstimateReport:
        return EstimateReport(
            targets=self.targets,
            stop_reason=self.trace.stop_reason,
            iterations=self.trace.iterations,
            kernel=self.kernel,
            learner_id=self.nuisance.learner_id,
            trace=self.trace.to_report(),
            density=to_snapshot(self.final_density),
        )


def prepare_initial_density(
    sample: Sample,
    settings: AppSettings,
    seed: int,
    flow: FlowConfig = None,
):
    """拟合干扰函数并初始化工作密度"""
    flow = flow or settings.flow
    nuisance = fit_nuisance(sample, settings.nuisance, seed)
    density = init_from_nuisance(sample.x, nuisance, settings.nuisance.floor, flow.mode)
    return nuisance, density


def run_estimation(
    sample: Sample,
    settings: AppSettings,
    seed: int = 0,
    flow: FlowConfig = None,
) -> EstimationResult:
    """
    完整估计流程 (一次流, 同时给出 ATE/RR/OR)

    Args:
        sample: 观测样本
        settings: 应用配置
        seed: 随机种子 (交叉验证折分配)
        flow: 覆盖 settings.flow 的流配置

    Returns:
        EstimationResult
    """
    flow = flow or settings.flow
    kernel = resolve_kernel_config(sample, settings.kernel)
    nuisance, density = prepare_initial_density(sample, settings, seed, flow)
    trace = run_flow(density, sample, flow, kernel)
    targets = estimate_targets(trace.final_density)

    logger.info(
        f"估计完成 - ATE: {targets.ate:.6f}, RR: {targets.rr:.6f}, OR: {targets.or_:.6f}, "
        f"停止原因: {trace.stop_reason.value}"
    )
    return EstimationResult(
        sample=sample,
        kernel=kernel,
        nuisance=nuisance,
        initial_density=density,
        trace=trace,
        targets=targets,
    )


def run_diagnosis(
    sample: Sample,
    settings: AppSettings,
    seed: int = 0,
    negate_direction: bool = False,
) -> DiagnoseReport:
    """
    记录模式下运行流并汇总每个不变量的检查结果

    Args:
        sample: 观测样本
        settings: 应用配置
        seed: 随机种子
        negate_direction: 故障注入, 反转更新方向

    Returns:
        DiagnoseReport
    """
    flow = settings.flow.model_copy(
        update={
            "invariant_mode": InvariantMode.RECORD,
            "negate_direction": negate_direction or settings.flow.negate_direction,
        }
    )
    kernel = resolve_kernel_config(sample, settings.kernel)
    _, density = prepare_initial_density(sample, settings, seed, flow)
    trace = run_flow(density, sample, flow, kernel)

    report = DiagnoseReport(
        passed=trace.invariants_passed,
        invariants=trace.invariants,
        stop_reason=trace.stop_reason,
        iterations=trace.iterations,
    )
    status = "通过" if report.passed else "未通过"
    logger.info(f"诊断完成 - 结果: {status}, 迭代: {trace.iterations}")
    return report


__all__ = [
    "load_sample_csv",
    "resolve_kernel_config",
    "EstimationResult",
    "prepare_initial_density",
    "run_estimation",
    "run_diagnosis",
]
