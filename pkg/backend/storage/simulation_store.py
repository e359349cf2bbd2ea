"""
蒙特卡洛结果存储
汇总CSV (无时间戳, 固定浮点格式, 同配置同种子逐字节一致)、重复JSON、直方图CSV
"""
import json
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd

from models.schemas import ReplicateReport, SimulationSummary
from utils.formulas import standardize
from utils.logger import logger


SUMMARY_COLUMNS = [
    "dgp",
    "method",
    "parameter",
    "stopping_rule",
    "max_iters",
    "n_cov",
    "bias_x100",
    "var",
    "rmse",
]

HISTOGRAM_COLUMNS = [
    "dgp",
    "method",
    "parameter",
    "stopping_rule",
    "max_iters",
    "replicate",
    "estimate",
    "standardized",
]

FLOAT_FORMAT = "%.10f"


def _limit_cell(max_iters: Optional[int]) -> str:
    """迭代上限单元格; 对照估计器留空 (避免pandas把整数列转成浮点)"""
    return "" if max_iters is None else str(max_iters)


class SimulationStore:
    """模拟结果存储管理器"""

    def __init__(self, output_dir: str = "results"):
        """
        初始化模拟结果存储

        Args:
            output_dir: 输出目录
        """
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def write_summary_csv(self, summaries: List[SimulationSummary], filename: str = "summary.csv") -> str:
        """写入汇总CSV"""
        rows = [
            {
                "dgp": s.dgp,
                "method": s.method.value,
                "parameter": s.parameter.value,
                "stopping_rule": s.stopping_rule,
                "max_iters": _limit_cell(s.max_iters),
                "n_cov": s.n_converged,
                "bias_x100": s.bias_x100,
                "var": s.var,
                "rmse": s.rmse,
            }
            for s in summaries
        ]
        path = self.output_dir / filename
        pd.DataFrame(rows, columns=SUMMARY_COLUMNS).to_csv(
            path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n"
        )
        logger.info(f"汇总结果已保存到 {path} - 共 {len(rows)} 行")
        return str(path)

    def write_histogram_csv(
        self,
        summaries: List[SimulationSummary],
        filename: str = "histogram.csv",
    ) -> str:
        """写入标准化估计值 (直方图数据)"""
        rows = []
        for s in summaries:
            standardized = standardize(s.replicates, s.truth)
            for replicate, estimate, z in zip(s.replicate_ids, s.replicates, standardized):
                rows.append(
                    {
                        "dgp": s.dgp,
                        "method": s.method.value,
                        "parameter": s.parameter.value,
                        "stopping_rule": s.stopping_rule,
                        "max_iters": _limit_cell(s.max_iters),
                        "replicate": replicate,
                        "estimate": estimate,
                        "standardized": float(z),
                    }
                )
        path = self.output_dir / filename
        pd.DataFrame(rows, columns=HISTOGRAM_COLUMNS).to_csv(
            path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n"
        )
        logger.info(f"直方图数据已保存到 {path} - 共 {len(rows)} 行")
        return str(path)

    def write_replicates_json(
        self,
        summaries: List[SimulationSummary],
        replicates: List[ReplicateReport],
        config: Dict[str, Any],
        wall_time: float,
        filename: str = "replicates.json",
    ) -> str:
        """写入完整重复结果与配置回显"""
        data = {
            "config": config,
            "wall_time": wall_time,
            "summaries": [s.model_dump(mode="json") for s in summaries],
            "replicates": [r.model_dump(mode="json") for r in replicates],
        }
        path = self.output_dir / filename
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, ensure_ascii=False, indent=2)

        logger.info(f"重复结果已保存到 {path} - 共 {len(replicates)} 次")
        return str(path)

    def load_replicates_json(self, filename: str = "replicates.json") -> Dict[str, Any]:
        """读取重复结果JSON"""
        with open(self.output_dir / filename, "r", encoding="utf-8") as f:
            return json.load(f)


__all__ = [
    "SUMMARY_COLUMNS",
    "HISTOGRAM_COLUMNS",
    "SimulationStore",
]
