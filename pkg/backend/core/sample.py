"""
观测样本表

以数组形式保存 n 个观测 (X_i, A_i, Y_i), 第 i 个观测对应工作密度中
协变量组 i 的原子 (i, 2A_i + Y_i)
"""
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from core.exceptions import InputDataError
from models.schemas import Observation


# (a, y) 的四种编码, 顺序与原子编码 2a + y 一致
BINARY_CODES = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)


@dataclass(frozen=True)
class Sample:
    """观测样本 (不可变)"""

    x: np.ndarray  # (n, d)
    a: np.ndarray  # (n,) 取值 {0,1}
    y: np.ndarray  # (n,) 取值 {0,1}

    def __post_init__(self):
        a = np.asarray(self.a).astype(int).ravel()
        y = np.asarray(self.y).astype(int).ravel()
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            # 一维协变量按列向量处理
            x = x.reshape(a.shape[0], -1)
        if not (x.shape[0] == a.shape[0] == y.shape[0]):
            raise InputDataError(
                f"inconsistent lengths: x={x.shape[0]}, a={a.shape[0]}, y={y.shape[0]}"
            )
        if not np.all(np.isin(a, (0, 1))) or not np.all(np.isin(y, (0, 1))):
            raise InputDataError("treatment and outcome must be binary")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return int(self.x.shape[0])

    @property
    def d(self) -> int:
        return int(self.x.shape[1])

    @property
    def codes(self) -> np.ndarray:
        """每个观测的原子编码 2a + y"""
        return 2 * self.a + self.y

    def observation(self, i: int) -> Observation:
        return Observation(x=[float(v) for v in self.x[i]], a=int(self.a[i]), y=int(self.y[i]))

    def observations(self) -> List[Observation]:
        return [self.observation(i) for i in range(self.n)]

    @classmethod
    def from_observations(cls, observations: Sequence[Observation]) -> "Sample":
        return cls(
            x=np.array([o.x for o in observations], dtype=float),
            a=np.array([o.a for o in observations], dtype=int),
            y=np.array([o.y for o in observations], dtype=int),
        )


__all__ = ["BINARY_CODES", "Sample"]
