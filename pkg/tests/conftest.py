"""
测试公共配置与fixture
"""
import os
import sys
from pathlib import Path

# 测试期间不写日志文件
os.environ.setdefault("LOG_TO_FILE", "false")

# 添加backend目录到路径
backend_dir = Path(__file__).parent.parent / "backend"
sys.path.insert(0, str(backend_dir))

import numpy as np
import pytest

from core.config import AppSettings
from core.density import WorkingDensity
from core.dgp import DGP1, sample_dgp
from core.sample import Sample
from models.enums import NormalizationMode
from models.schemas import KernelConfig


class ConstantNuisance:
    """常数干扰函数 (满足 NuisancePredictor 接口)"""

    def __init__(self, e1: float = 0.5, q0: float = 0.3, q1: float = 0.6):
        self.e1 = e1
        self.q = {0: q0, 1: q1}

    def propensity(self, x):
        return np.full(np.asarray(x).shape[0], self.e1)

    def outcome(self, x, a):
        return np.full(np.asarray(x).shape[0], self.q[a])


def uniform_density(sample: Sample, mode=NormalizationMode.GLOBAL, floor: float = 1e-3) -> WorkingDensity:
    """每个原子权重 1/(4n) 的工作密度"""
    return WorkingDensity(
        x=sample.x.copy(),
        weights=np.full((sample.n, 4), 1.0 / (4 * sample.n)),
        mode=mode,
        floor=floor,
    )


def empirical_density(sample: Sample) -> WorkingDensity:
    """经验分布: 观测原子权重 1/n, 其余为0"""
    weights = np.zeros((sample.n, 4))
    weights[np.arange(sample.n), sample.codes] = 1.0 / sample.n
    return WorkingDensity(x=sample.x.copy(), weights=weights, mode=NormalizationMode.GLOBAL, floor=1e-3)


def random_distribution(rng: np.random.Generator, n: int = 8, d: int = 2):
    """随机离散分布 (协变量, (n,4)权重, 核参数)"""
    x = rng.normal(size=(n, d))
    weights = rng.dirichlet(np.ones(4 * n)).reshape(n, 4)
    config = KernelConfig(sigma=float(rng.uniform(0.3, 2.0)), binary_scale=float(rng.uniform(0.5, 2.0)))
    return x, weights, config


@pytest.fixture
def dgp1_sample() -> Sample:
    return sample_dgp(DGP1, 40, seed=7)


@pytest.fixture
def kernel_config() -> KernelConfig:
    return KernelConfig(sigma=0.5, binary_scale=1.0)


@pytest.fixture
def settings(tmp_path) -> AppSettings:
    """小规模快速配置"""
    return AppSettings.load(
        overrides={
            "flow": {"max_iters": 5},
            "simulation": {
                "n": 40,
                "reps": 2,
                "quadrature_nodes": 1000,
                "golden_dir": str(tmp_path / "golden"),
                "output_dir": str(tmp_path / "results"),
            },
        }
    )
