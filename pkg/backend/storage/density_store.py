"""
工作密度存储
将流结束时的工作密度保存为JSON, 以便对同一去偏分布查询新的目标参数
"""
import json
from pathlib import Path

from core.density import WorkingDensity, from_snapshot, to_snapshot
from core.exceptions import InputDataError
from models.schemas import DensitySnapshot
from utils.logger import logger


def save_density(density: WorkingDensity, path) -> str:
    """
    保存工作密度

    Args:
        density: 工作密度
        path: JSON文件路径

    Returns:
        保存的文件路径
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    snapshot = to_snapshot(density)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(snapshot.model_dump(mode="json"), f, ensure_ascii=False, indent=2)

    logger.info(f"工作密度已保存到 {path} - 原子数: {len(snapshot.atoms)}")
    return str(path)


def load_density(path) -> WorkingDensity:
    """
    加载工作密度

    Raises:
        InputDataError: 文件不存在或不是合法快照
    """
    path = Path(path)
    if not path.exists():
        logger.error(f"文件不存在: {path}")
        raise InputDataError(f"density file not found: {path}")

    try:
        with open(path, "r", encoding="utf-8") as f:
            snapshot = DensitySnapshot(**json.load(f))
    except (json.JSONDecodeError, TypeError, ValueError) as e:
        raise InputDataError(f"invalid density snapshot: {e}") from e

    density = from_snapshot(snapshot)
    logger.info(f"工作密度已从 {path} 加载 - 协变量组: {density.n}")
    return density


__all__ = ["save_density", "load_density"]
