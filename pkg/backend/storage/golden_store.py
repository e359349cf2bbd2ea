"""
真值金标准存储
每个数据生成过程一个JSON文件, 记录求积节点数; 缺失或节点数不同时重新生成
"""
import json
from pathlib import Path

from core.dgp import compute_truth, get_dgp
from models.enums import DgpId
from models.schemas import GoldenTruth
from utils.logger import logger


class GoldenStore:
    """真值金标准存储管理器"""

    def __init__(self, golden_dir: str = "data/golden"):
        """
        初始化金标准存储

        Args:
            golden_dir: 金标准文件目录
        """
        self.golden_dir = Path(golden_dir)
        self.golden_dir.mkdir(parents=True, exist_ok=True)

    def path_for(self, dgp_id: DgpId) -> Path:
        return self.golden_dir / f"{DgpId(dgp_id).value.lower()}_truth.json"

    def load(self, dgp_id: DgpId):
        """读取金标准文件, 不存在或损坏时返回 None"""
        path = self.path_for(dgp_id)
        if not path.exists():
            return None
        try:
            with open(path, "r", encoding="utf-8") as f:
                return GoldenTruth(**json.load(f))
        except (json.JSONDecodeError, TypeError, ValueError) as e:
            logger.warning(f"金标准文件损坏, 将重新生成: {path} ({e})")
            return None

    def generate(self, dgp_id: DgpId, nodes: int) -> GoldenTruth:
        """计算真值并写入金标准文件"""
        dgp_id = DgpId(dgp_id)
        truth = GoldenTruth(
            dgp=dgp_id.value,
            nodes=nodes,
            targets=compute_truth(get_dgp(dgp_id), nodes),
        )
        path = self.path_for(dgp_id)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(truth.model_dump(mode="json", by_alias=True), f, ensure_ascii=False, indent=2)

        logger.info(f"金标准已生成 - {dgp_id.value}, 节点数: {nodes}, 文件: {path}")
        return truth

    def get(self, dgp_id: DgpId, nodes: int, regenerate: bool = False) -> GoldenTruth:
        """
        获取真值

        Args:
            dgp_id: 数据生成过程
            nodes: 求积节点数
            regenerate: 强制重新生成

        Returns:
            GoldenTruth
        """
        if not regenerate:
            cached = self.load(dgp_id)
            if cached is not None and cached.nodes == nodes:
                return cached
        return self.generate(dgp_id, nodes)


__all__ = ["GoldenStore"]
