"""
ULFS-KDPE 命令行入口

子命令:
    estimate  读取观测CSV, 运行流, 输出JSON报告
    simulate  蒙特卡洛实验, 输出汇总CSV/重复JSON/直方图CSV
    diagnose  记录模式下运行流, 输出每个不变量的通过/失败表
    truths    输出数据生成过程的真值 (金标准文件)

退出码: 0 成功, 2 输入错误, 3 数值失败, 4 不变量违反
"""
import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

from core.config import AppSettings
from core.exceptions import (
    EXIT_INPUT_ERROR,
    EXIT_INVARIANT_VIOLATION,
    EXIT_NUMERICAL_FAILURE,
    EXIT_OK,
    ConfigError,
    UlfsKdpeError,
)
from models.enums import DgpId, NormalizationMode, StopRule
from services.estimation_service import load_sample_csv, run_diagnosis, run_estimation
from services.simulation_service import run_monte_carlo
from storage.density_store import save_density
from storage.golden_store import GoldenStore
from storage.simulation_store import SimulationStore
from utils.logger import logger, setup_logger


# ==================== 参数解析 ====================

def _parse_sigma(value: str):
    if value == "median":
        return value
    try:
        sigma = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"sigma must be a number or 'median', got {value}")
    if sigma <= 0:
        raise argparse.ArgumentTypeError("sigma must be positive")
    return sigma


# --delta-n none 的占位值
DISABLED = "none"


def _parse_delta_n(value: str):
    if value.lower() == DISABLED:
        return DISABLED
    try:
        return float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"delta-n must be a number or 'none', got {value}")


def _parse_rules(value: str) -> List[StopRule]:
    rules = []
    for item in value.split(","):
        item = item.strip().lower()
        if not item:
            continue
        try:
            rules.append(StopRule(item))
        except ValueError:
            raise argparse.ArgumentTypeError(f"unknown stopping rule: {item}")
    return rules


def _parse_limits(value: str) -> List[int]:
    limits = []
    for item in value.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            limit = int(item)
        except ValueError:
            raise argparse.ArgumentTypeError(f"iteration limit must be an integer, got {item}")
        if limit < 1:
            raise argparse.ArgumentTypeError(f"iteration limit must be >= 1, got {limit}")
        limits.append(limit)
    if not limits:
        raise argparse.ArgumentTypeError("no iteration limits given")
    return limits


def _add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON配置文件 (默认读取 ULFS_KDPE_CONFIG)")
    parser.add_argument("--log-level", help="日志级别")
    parser.add_argument("--seed", type=int, help="随机种子")


def _add_flow_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--sigma", type=_parse_sigma, help="核带宽 (数值或 median)")
    parser.add_argument("--delta", type=float, help="Euler步长 Δ")
    parser.add_argument("--max-iters", type=int, help="最大迭代次数")
    parser.add_argument("--delta-n", type=_parse_delta_n, help="硬得分目标 δ_n (none 表示不启用)")
    parser.add_argument("--stopping", type=_parse_rules, help="启用的停止规则, 逗号分隔 sc1..sc5")
    parser.add_argument(
        "--norm-mode",
        choices=[m.value for m in NormalizationMode],
        help="归一化模式",
    )


def build_parser() -> argparse.ArgumentParser:
    """构建命令行解析器"""
    parser = argparse.ArgumentParser(prog="ulfs-kdpe", description="ULFS-KDPE 估计与模拟")
    commands = parser.add_subparsers(dest="command", required=True)

    estimate = commands.add_parser("estimate", help="对观测数据估计 ATE/RR/OR")
    _add_common_arguments(estimate)
    _add_flow_arguments(estimate)
    estimate.add_argument("--input", required=True, help="观测CSV (x1..xd,a,y)")
    estimate.add_argument("--output", help="JSON报告路径 (默认stdout)")
    estimate.add_argument("--save-density", help="另存最终工作密度的JSON路径")

    simulate = commands.add_parser("simulate", help="蒙特卡洛实验")
    _add_common_arguments(simulate)
    _add_flow_arguments(simulate)
    simulate.add_argument("--dgp", choices=[d.value for d in DgpId], help="数据生成过程")
    simulate.add_argument("--n", type=int, help="样本量")
    simulate.add_argument("--reps", type=int, help="重复次数 B")
    simulate.add_argument("--jobs", type=int, help="并行作业数")
    simulate.add_argument("--output", help="输出目录")
    simulate.add_argument("--compare-rules", action="store_true", default=None, help="逐条停止规则比较")
    simulate.add_argument(
        "--iteration-limits",
        type=_parse_limits,
        help="逐规则比较的迭代上限, 逗号分隔 (如 100,150,200)",
    )

    diagnose = commands.add_parser("diagnose", help="流不变量诊断")
    _add_common_arguments(diagnose)
    _add_flow_arguments(diagnose)
    diagnose.add_argument("--input", required=True, help="观测CSV (x1..xd,a,y)")
    diagnose.add_argument("--output", help="JSON诊断表路径 (默认stdout)")
    diagnose.add_argument(
        "--inject-negated-direction",
        action="store_true",
        help="故障注入: 反转更新方向",
    )

    truths = commands.add_parser("truths", help="输出真值")
    _add_common_arguments(truths)
    truths.add_argument("--dgp", choices=[d.value for d in DgpId], help="数据生成过程")
    truths.add_argument("--regenerate", action="store_true", help="强制重新生成金标准文件")

    return parser


def build_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """将显式给出的命令行参数转换为按节嵌套的配置覆盖项"""
    overrides: Dict[str, Dict[str, Any]] = {
        "kernel": {},
        "flow": {},
        "simulation": {},
        "log": {},
    }

    def put(section: str, key: str, attr: str):
        if attr in args and getattr(args, attr) is not None:
            overrides[section][key] = getattr(args, attr)

    put("kernel", "sigma", "sigma")
    put("flow", "delta", "delta")
    put("flow", "max_iters", "max_iters")
    put("flow", "mode", "norm_mode")
    put("simulation", "mode", "norm_mode")
    put("simulation", "seed", "seed")
    put("simulation", "dgp", "dgp")
    put("simulation", "n", "n")
    put("simulation", "reps", "reps")
    put("simulation", "jobs", "jobs")
    put("simulation", "compare_rules", "compare_rules")
    put("simulation", "iteration_limits", "iteration_limits")
    put("log", "level", "log_level")

    if "delta_n" in args and args.delta_n is not None:
        overrides["flow"]["delta_n"] = None if args.delta_n == DISABLED else args.delta_n
    if "stopping" in args and args.stopping is not None:
        overrides["flow"]["stopping"] = {"enabled": args.stopping}
    if args.command == "simulate" and args.output:
        overrides["simulation"]["output_dir"] = args.output

    return {section: values for section, values in overrides.items() if values}


# ==================== 子命令 ====================

def _write_json(data: Dict[str, Any], output: Optional[str]) -> None:
    text = json.dumps(data, ensure_ascii=False, indent=2)
    if output:
        path = Path(output)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n", encoding="utf-8")
        logger.info(f"结果已写入 {path}")
    else:
        sys.stdout.write(text + "\n")


def cmd_estimate(args: argparse.Namespace, settings: AppSettings) -> int:
    """estimate 子命令"""
    sample = load_sample_csv(args.input)
    result = run_estimation(sample, settings, seed=settings.simulation.seed)
    _write_json(result.to_report().model_dump(mode="json", by_alias=True), args.output)
    if args.save_density:
        save_density(result.final_density, args.save_density)
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace, settings: AppSettings) -> int:
    """simulate 子命令"""
    result = run_monte_carlo(settings)
    store = SimulationStore(settings.simulation.output_dir)
    store.write_summary_csv(result.summaries)
    store.write_histogram_csv(result.summaries)
    store.write_replicates_json(result.summaries, result.replicates, result.config, result.wall_time)
    return EXIT_OK


def cmd_diagnose(args: argparse.Namespace, settings: AppSettings) -> int:
    """diagnose 子命令"""
    sample = load_sample_csv(args.input)
    report = run_diagnosis(
        sample,
        settings,
        seed=settings.simulation.seed,
        negate_direction=args.inject_negated_direction,
    )
    _write_json(report.model_dump(mode="json"), args.output)

    if report.passed:
        return EXIT_OK
    first = next(row for row in report.invariants if not row.passed)
    logger.error(
        f"不变量违反 - {first.name.value}, 首次失败迭代: {first.first_failure_iteration}, "
        f"失败次数: {first.failures}"
    )
    return EXIT_INVARIANT_VIOLATION


def cmd_truths(args: argparse.Namespace, settings: AppSettings) -> int:
    """truths 子命令"""
    store = GoldenStore(settings.simulation.golden_dir)
    golden = store.get(settings.simulation.dgp, settings.simulation.quadrature_nodes, args.regenerate)
    _write_json(
        {"dgp": golden.dgp, "nodes": golden.nodes, "targets": golden.targets.model_dump(by_alias=True)},
        None,
    )
    return EXIT_OK


COMMANDS = {
    "estimate": cmd_estimate,
    "simulate": cmd_simulate,
    "diagnose": cmd_diagnose,
    "truths": cmd_truths,
}


def main(argv: Optional[List[str]] = None) -> int:
    """
    命令行主函数

    Returns:
        退出码
    """
    load_dotenv()
    args = build_parser().parse_args(argv)

    try:
        settings = AppSettings.load(args.config, build_overrides(args))
    except ConfigError as e:
        logger.error(f"配置错误: {e}")
        return EXIT_INPUT_ERROR

    setup_logger(settings.log)
    try:
        return COMMANDS[args.command](args, settings)
    except UlfsKdpeError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except Exception:
        # 学习器、线性代数等第三方异常按数值失败处理
        logger.exception(f"{args.command} 执行失败")
        return EXIT_NUMERICAL_FAILURE


if __name__ == "__main__":
    sys.exit(main())
