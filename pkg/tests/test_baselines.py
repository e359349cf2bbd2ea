"""
对照估计器测试
"""
import numpy as np
import pytest

from conftest import ConstantNuisance
from core.config import NuisanceSettings
from core.density import WorkingDensity, init_from_nuisance
from core.dgp import DGP1, sample_dgp
from core.exceptions import PropensityError
from core.sample import Sample
from core.targets import eif_target, estimate_targets
from models.enums import Method, NormalizationMode, TargetName
from services.baseline_service import initial_plugin, one_step, tmle_ate
from services.nuisance_service import fit_nuisance


@pytest.fixture(scope="module")
def fitted():
    sample = sample_dgp(DGP1, 120, seed=11)
    nuisance = fit_nuisance(sample, NuisanceSettings(), seed=0)
    d0 = init_from_nuisance(sample.x, nuisance, floor=1e-3, mode=NormalizationMode.XFIXED)
    return sample, d0


def test_initial_plugin(fitted):
    _, d0 = fitted
    result = initial_plugin(d0)
    targets = estimate_targets(d0)

    assert result.method == Method.INITIAL
    assert result.estimates[TargetName.ATE] == targets.ate
    assert result.estimates[TargetName.OR] == targets.or_


def test_one_step_adds_mean_eif(fitted):
    sample, d0 = fitted
    result = one_step(d0, sample)
    targets = estimate_targets(d0)

    assert set(result.estimates) == set(TargetName)
    for name in TargetName:
        correction = float(np.mean(eif_target(d0, sample, name)))
        assert result.estimates[name] == pytest.approx(targets.get(name) + correction)

    only_rr = one_step(d0, sample, TargetName.RR)
    assert list(only_rr.estimates) == [TargetName.RR]


def test_tmle_solves_eif_equation(fitted):
    sample, d0 = fitted
    result = tmle_ate(d0, sample, max_fluct=20)

    assert result.method == Method.TMLE_ATE
    assert list(result.estimates) == [TargetName.ATE]
    assert result.converged
    assert 1 <= result.iterations <= 20
    assert -1.0 < result.estimates[TargetName.ATE] < 1.0


def test_tmle_fixed_point_when_initial_solves_eif():
    # 每组内 Q̄ 等于该组 Y 的样本均值, 聪明协变量的得分方程在 ε = 0 处成立
    sample = Sample(
        x=np.linspace(0.0, 1.0, 10)[:, None],
        a=[1, 1, 1, 1, 1, 0, 0, 0, 0, 0],
        y=[1, 1, 1, 0, 0, 1, 1, 0, 0, 0],
    )
    d0 = init_from_nuisance(
        sample.x, ConstantNuisance(e1=0.5, q0=0.4, q1=0.6), floor=1e-3, mode=NormalizationMode.GLOBAL
    )
    initial = estimate_targets(d0).ate
    result = tmle_ate(d0, sample, max_fluct=20)

    assert initial == pytest.approx(0.2)
    assert result.converged
    assert result.iterations == 1
    assert result.estimates[TargetName.ATE] == pytest.approx(initial, abs=1e-8)


def test_tmle_without_fluctuation_returns_initial(fitted):
    sample, d0 = fitted
    result = tmle_ate(d0, sample, max_fluct=0)

    assert result.estimates[TargetName.ATE] == estimate_targets(d0).ate
    assert result.iterations == 0
    assert not result.converged


def test_tmle_rejects_tiny_propensity(fitted):
    sample, d0 = fitted
    weights = d0.weights.copy()
    weights[0, 2:] = 1e-15
    d = WorkingDensity(x=d0.x, weights=weights / weights.sum(), mode=d0.mode, floor=d0.floor)
    with pytest.raises(PropensityError):
        tmle_ate(d, sample)
