"""
工作密度测试
"""
import numpy as np
import pytest

from conftest import ConstantNuisance, uniform_density
from core.density import (
    WorkingDensity,
    conditional_outcome_mean,
    from_snapshot,
    group_mass,
    init_from_nuisance,
    log_density_at_sample,
    needs_stabilization,
    outcome_regression,
    propensity,
    renormalize,
    stabilize,
    to_snapshot,
)
from core.exceptions import (
    DegenerateConditionalError,
    InitializationError,
    PositivityViolationError,
    SupportLookupError,
)
from core.sample import Sample
from models.enums import NormalizationMode


XS = np.linspace(0.0, 1.0, 6)[:, None]


@pytest.mark.parametrize("mode", list(NormalizationMode))
def test_init_from_nuisance_factorizes(mode):
    d = init_from_nuisance(XS, ConstantNuisance(e1=0.3, q0=0.2, q1=0.7), floor=1e-3, mode=mode)

    assert d.weights.shape == (6, 4)
    assert d.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(group_mass(d), 1.0 / 6)
    assert np.allclose(propensity(d, 1), 0.3)
    assert np.allclose(outcome_regression(d, 0), 0.2)
    assert np.allclose(outcome_regression(d, 1), 0.7)
    assert conditional_outcome_mean(d, 1, 2) == pytest.approx(0.7)


def test_init_clips_to_floor():
    d = init_from_nuisance(XS, ConstantNuisance(e1=0.0, q0=1.0, q1=0.5), floor=0.01, mode="global")
    assert np.allclose(propensity(d, 1), 0.01)
    assert np.allclose(outcome_regression(d, 0), 0.99)
    assert np.all(d.weights > 0.0)


@pytest.mark.parametrize(
    "xs, fit, floor",
    [
        (np.array([[0.5]]), ConstantNuisance(), 1e-3),
        (XS, ConstantNuisance(), 0.3),
        (XS, ConstantNuisance(), 0.0),
        (XS, ConstantNuisance(e1=float("nan")), 1e-3),
    ],
)
def test_init_rejects_invalid_inputs(xs, fit, floor):
    with pytest.raises(InitializationError):
        init_from_nuisance(xs, fit, floor=floor, mode="global")


def test_renormalize_modes():
    rng = np.random.default_rng(0)
    raw = WorkingDensity(x=XS, weights=rng.uniform(0.1, 2.0, (6, 4)), mode=NormalizationMode.GLOBAL, floor=1e-3)

    glob = renormalize(raw)
    assert glob.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(glob.weights / raw.weights, glob.weights[0, 0] / raw.weights[0, 0])

    fixed = renormalize(raw, NormalizationMode.XFIXED)
    assert fixed.mode == NormalizationMode.XFIXED
    assert np.allclose(group_mass(fixed), 1.0 / 6, atol=1e-15)
    # 组内条件分布不变
    assert np.allclose(propensity(fixed, 1), propensity(raw, 1))


def test_renormalize_requires_positive_weights():
    weights = np.full((6, 4), 1.0 / 24)
    weights[3, 2] = 0.0
    d = WorkingDensity(x=XS, weights=weights, mode=NormalizationMode.GLOBAL, floor=1e-3)
    with pytest.raises(PositivityViolationError):
        renormalize(d)


def test_degenerate_conditional():
    weights = np.full((6, 4), 1.0 / 20)
    weights[1, 2:] = 0.0
    d = WorkingDensity(x=XS, weights=weights, mode=NormalizationMode.GLOBAL, floor=1e-3)

    assert conditional_outcome_mean(d, 0, 1) == pytest.approx(0.5)
    with pytest.raises(DegenerateConditionalError):
        conditional_outcome_mean(d, 1, 1)
    with pytest.raises(DegenerateConditionalError):
        outcome_regression(d, 1)


def test_stabilize_clamps_and_keeps_group_mass():
    weights = np.full((6, 4), 1.0 / 24)
    weights[0] = [1e-9, 0.1, 0.02, 0.02]
    d = renormalize(WorkingDensity(x=XS, weights=weights, mode=NormalizationMode.GLOBAL, floor=0.05))
    assert needs_stabilization(d)

    s = stabilize(d)
    for values in (propensity(s, 1), outcome_regression(s, 0), outcome_regression(s, 1)):
        assert np.all(values >= 0.05 - 1e-12)
        assert np.all(values <= 0.95 + 1e-12)
    assert np.allclose(group_mass(s), group_mass(d))
    assert outcome_regression(s, 0)[0] == pytest.approx(0.95)
    assert not needs_stabilization(uniform_density(Sample(x=XS, a=[0] * 6, y=[0] * 6)))


def test_log_density_at_sample():
    sample = Sample(x=XS, a=[0, 1, 1, 0, 1, 0], y=[1, 1, 0, 0, 0, 1])
    d = uniform_density(sample)
    # 1/(4n) · n = 1/4
    assert np.allclose(log_density_at_sample(d, sample), np.log(0.25))

    shifted = Sample(x=XS + 1.0, a=sample.a, y=sample.y)
    with pytest.raises(SupportLookupError):
        log_density_at_sample(d, shifted)


def test_snapshot_preserves_density():
    d = init_from_nuisance(XS, ConstantNuisance(e1=0.4), floor=1e-3, mode="xfixed")
    snapshot = to_snapshot(d)
    assert len(snapshot.atoms) == 24
    assert [atom.code for atom in snapshot.atoms[:4]] == [0, 1, 2, 3]

    restored = from_snapshot(snapshot)
    assert restored.mode == NormalizationMode.XFIXED
    assert np.array_equal(restored.x, d.x)
    assert np.array_equal(restored.weights, d.weights)


def test_snapshot_out_of_order_rejected():
    snapshot = to_snapshot(uniform_density(Sample(x=XS, a=[0] * 6, y=[1] * 6)))
    atoms = list(snapshot.atoms)
    atoms[0], atoms[1] = atoms[1], atoms[0]
    with pytest.raises(SupportLookupError):
        from_snapshot(snapshot.model_copy(update={"atoms": atoms}))
