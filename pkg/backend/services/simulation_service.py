"""
蒙特卡洛模拟服务
每次重复: 抽样 -> 拟合干扰函数 -> 初始化密度 -> 一次流 + 对照估计器
汇总: bias×100、方差、RMSE、收敛次数
"""
import os
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed

from core.config import AppSettings
from core.dgp import get_dgp, sample_dgp
from core.exceptions import UlfsKdpeError
from core.flow import run_flow
from core.targets import estimate_targets
from models.enums import DgpId, Method, StopRule, TargetName
from models.schemas import ReplicateEstimate, ReplicateReport, SimulationSummary, TargetEstimates
from services.baseline_service import initial_plugin, one_step, tmle_ate
from services.estimation_service import run_estimation
from storage.golden_store import GoldenStore
from utils.formulas import monte_carlo_moments
from utils.logger import logger, setup_worker_logger


# 未区分停止规则时的占位
NO_RULE = "-"

# 逐规则比较的规则顺序
COMPARED_RULES = [StopRule.SC1, StopRule.SC2, StopRule.SC3, StopRule.SC4, StopRule.SC5]

# 进度日志间隔
PROGRESS_EVERY = 10


def derive_replicate_seeds(master_seed: int, reps: int) -> List[int]:
    """
    由主种子派生每次重复的64位种子

    SeedSequence.spawn 的子序列互相独立, 与并行度无关
    """
    children = np.random.SeedSequence(master_seed).spawn(reps)
    return [int(child.generate_state(1, dtype=np.uint64)[0]) for child in children]


def _baseline_estimates(method: Method, fn, *args) -> List[ReplicateEstimate]:
    """运行对照估计器, 失败时记为未收敛"""
    try:
        result = fn(*args)
    except UlfsKdpeError as e:
        logger.warning(f"对照估计器 {method.value} 失败: {e}")
        names = [TargetName.ATE] if method == Method.TMLE_ATE else list(TargetName)
        return [ReplicateEstimate(method=method, parameter=name) for name in names]

    return [
        ReplicateEstimate(
            method=method,
            parameter=name,
            estimate=value,
            converged=result.converged,
        )
        for name, value in result.estimates.items()
    ]


def _flow_estimates(
    targets: Optional[TargetEstimates],
    rule: str,
    max_iters: int,
    stop_reason: Optional[StopRule] = None,
) -> List[ReplicateEstimate]:
    """一次流的三个目标估计; targets 为空表示该流失败"""
    return [
        ReplicateEstimate(
            method=Method.ULFS_KDPE,
            parameter=name,
            stopping_rule=rule,
            max_iters=max_iters,
            stop_reason=stop_reason,
            estimate=None if targets is None else targets.get(name),
            converged=stop_reason is not None and stop_reason != StopRule.MAX_ITERS,
        )
        for name in TargetName
    ]


def rule_iteration_limits(settings: AppSettings) -> List[int]:
    """
    逐规则比较的迭代上限

    compare_rules 关闭且未给出 iteration_limits 时为空 (不做逐规则比较)
    """
    sim = settings.simulation
    if not sim.compare_rules and not sim.iteration_limits:
        return []
    return list(sim.iteration_limits) or [settings.flow.max_iters]


def run_replicate(
    dgp_id: DgpId,
    n: int,
    seed: int,
    replicate: int,
    settings: AppSettings,
) -> ReplicateReport:
    """
    执行单次蒙特卡洛重复

    失败时记录原因并返回, 不中断整个实验

    Args:
        dgp_id: 数据生成过程
        n: 样本量
        seed: 本次重复的种子
        replicate: 重复序号
        settings: 应用配置

    Returns:
        ReplicateReport
    """
    started = time.perf_counter()
    sim = settings.simulation
    flow_cfg = settings.flow.model_copy(update={"mode": sim.mode})
    report = ReplicateReport(replicate=replicate, seed=seed)

    try:
        sample = sample_dgp(get_dgp(dgp_id), n, seed)
        result = run_estimation(sample, settings, seed, flow_cfg)
    except UlfsKdpeError as e:
        logger.warning(f"重复 {replicate} 失败: {e}")
        report.error = f"{type(e).__name__}: {e}"
        report.wall_time = time.perf_counter() - started
        return report

    trace = result.trace
    report.flow_runs = 1
    report.stop_reason = trace.stop_reason
    report.iterations = trace.iterations
    report.eif_mean_initial = trace.eif_mean_initial
    report.eif_mean_final = trace.eif_mean_final

    estimates: List[ReplicateEstimate] = []
    d0 = result.initial_density
    for method in sim.methods:
        if method == Method.ULFS_KDPE:
            estimates.extend(
                _flow_estimates(result.targets, NO_RULE, flow_cfg.max_iters, trace.stop_reason)
            )
        elif method == Method.INITIAL:
            estimates.extend(_baseline_estimates(method, initial_plugin, d0))
        elif method == Method.ONE_STEP:
            estimates.extend(_baseline_estimates(method, one_step, d0, sample))
        elif method == Method.TMLE_ATE:
            estimates.extend(_baseline_estimates(method, tmle_ate, d0, sample, sim.tmle_max_fluct))

    for limit in rule_iteration_limits(settings):
        for rule in COMPARED_RULES:
            # 只启用单条规则, 关闭硬得分目标, 停止原因只能是该规则或迭代上限
            stopping = flow_cfg.stopping.model_copy(update={"enabled": {rule}})
            rule_cfg = flow_cfg.model_copy(
                update={"stopping": stopping, "delta_n": None, "max_iters": limit}
            )
            try:
                rule_trace = run_flow(d0, sample, rule_cfg, result.kernel)
                rule_targets = estimate_targets(rule_trace.final_density)
            except UlfsKdpeError as e:
                logger.warning(f"重复 {replicate} 规则 {rule.value} (上限 {limit}) 失败: {e}")
                estimates.extend(_flow_estimates(None, rule.value, limit))
                continue
            estimates.extend(
                _flow_estimates(rule_targets, rule.value, limit, rule_trace.stop_reason)
            )

    report.estimates = estimates
    report.wall_time = time.perf_counter() - started
    if (replicate + 1) % PROGRESS_EVERY == 0:
        logger.info(f"重复 {replicate + 1} 完成 - 停止原因: {trace.stop_reason.value}")
    return report


def _replicate_job(
    parent_pid: int,
    dgp_id: DgpId,
    n: int,
    seed: int,
    replicate: int,
    settings: AppSettings,
) -> ReplicateReport:
    """joblib任务入口, 在子进程中先切换为子进程日志配置"""
    if os.getpid() != parent_pid:
        setup_worker_logger(settings.log)
    return run_replicate(dgp_id, n, seed, replicate, settings)


SummaryKey = Tuple[Method, TargetName, str, Optional[int]]


def _summary_keys(settings: AppSettings) -> List[SummaryKey]:
    """汇总行的固定顺序: 方法 -> (迭代上限, 停止规则) -> 参数"""
    keys = []
    for method in settings.simulation.methods:
        if method == Method.ULFS_KDPE:
            flows = [(NO_RULE, settings.flow.max_iters)]
            flows += [
                (rule.value, limit)
                for limit in rule_iteration_limits(settings)
                for rule in COMPARED_RULES
            ]
        else:
            flows = [(NO_RULE, None)]
        names = [TargetName.ATE] if method == Method.TMLE_ATE else list(TargetName)
        for rule, limit in flows:
            for name in names:
                keys.append((method, name, rule, limit))
    return keys


def summarize(
    dgp_id: DgpId,
    reports: List[ReplicateReport],
    truth: TargetEstimates,
    settings: AppSettings,
) -> List[SimulationSummary]:
    """
    按 (方法, 参数, 停止规则, 迭代上限) 汇总

    估计失败的重复不进入矩统计; 收敛次数统计停止规则在迭代上限前触发的重复
    """
    summaries = []
    for method, name, rule, limit in _summary_keys(settings):
        values: List[float] = []
        ids: List[int] = []
        n_converged = 0
        for report in reports:
            for est in report.estimates:
                key = (est.method, est.parameter, est.stopping_rule, est.max_iters)
                if key != (method, name, rule, limit):
                    continue
                if est.converged:
                    n_converged += 1
                if est.estimate is not None and np.isfinite(est.estimate):
                    values.append(est.estimate)
                    ids.append(report.replicate)

        true_value = truth.get(name)
        moments = monte_carlo_moments(values, true_value)
        summaries.append(
            SimulationSummary(
                dgp=DgpId(dgp_id).value,
                method=method,
                parameter=name,
                stopping_rule=rule,
                max_iters=limit,
                n_converged=n_converged,
                n_used=len(values),
                truth=true_value,
                bias_x100=100.0 * moments["bias"],
                var=moments["var"],
                rmse=moments["rmse"],
                replicates=values,
                replicate_ids=ids,
            )
        )
    return summaries


@dataclass
class MonteCarloResult:
    """蒙特卡洛实验结果"""

    dgp: DgpId
    truth: TargetEstimates
    summaries: List[SimulationSummary]
    replicates: List[ReplicateReport]
    config: Dict[str, Any]
    wall_time: float
    failures: int = field(default=0)


def run_monte_carlo(
    settings: AppSettings,
    dgp_id: Optional[DgpId] = None,
    reps: Optional[int] = None,
    jobs: Optional[int] = None,
) -> MonteCarloResult:
    """
    运行蒙特卡洛实验

    Args:
        settings: 应用配置
        dgp_id: 数据生成过程 (默认取配置)
        reps: 重复次数 B (默认取配置)
        jobs: 并行作业数 (默认取配置)

    Returns:
        MonteCarloResult
    """
    sim = settings.simulation
    dgp_id = DgpId(dgp_id or sim.dgp)
    reps = reps or sim.reps
    jobs = jobs or sim.jobs

    started = time.perf_counter()
    truth = GoldenStore(sim.golden_dir).get(dgp_id, sim.quadrature_nodes).targets
    seeds = derive_replicate_seeds(sim.seed, reps)
    parent_pid = os.getpid()

    logger.info(
        f"蒙特卡洛开始 - {dgp_id.value}, n: {sim.n}, B: {reps}, 并行: {jobs}, "
        f"方法: {[m.value for m in sim.methods]}"
    )

    reports = Parallel(n_jobs=jobs)(
        delayed(_replicate_job)(parent_pid, dgp_id, sim.n, seed, b, settings)
        for b, seed in enumerate(seeds)
    )
    reports = sorted(reports, key=lambda r: r.replicate)

    summaries = summarize(dgp_id, reports, truth, settings)
    failures = sum(1 for r in reports if r.error is not None)
    wall_time = time.perf_counter() - started

    if failures:
        logger.warning(f"{failures} 次重复估计失败, 已从矩统计中排除")
    logger.info(f"蒙特卡洛完成 - {dgp_id.value}, 耗时: {wall_time:.1f}s")

    return MonteCarloResult(
        dgp=dgp_id,
        truth=truth,
        summaries=summaries,
        replicates=reports,
        config=settings.model_dump(mode="json"),
        wall_time=wall_time,
        failures=failures,
    )


__all__ = [
    "NO_RULE",
    "COMPARED_RULES",
    "derive_replicate_seeds",
    "rule_iteration_limits",
    "run_replicate",
    "summarize",
    "MonteCarloResult",
    "run_monte_carlo",
]
