"""
验收测试 (慢速, 默认不运行)

运行方式: pytest -m slow
"""
import numpy as np
import pytest

from core.config import AppSettings, FlowConfig, StoppingConfig
from core.dgp import DGP1, compute_truth, sample_dgp
from core.flow import build_state, euler_step, run_flow
from core.targets import eif_target
from models.enums import DgpId, Method, StopRule, TargetName
from services.estimation_service import prepare_initial_density, resolve_kernel_config
from services.simulation_service import (
    NO_RULE,
    MonteCarloResult,
    derive_replicate_seeds,
    run_monte_carlo,
)


pytestmark = pytest.mark.slow


def _dgp1_runs(count: int, n: int = 100):
    settings = AppSettings.load()
    for seed in derive_replicate_seeds(2024, count):
        sample = sample_dgp(DGP1, n, seed)
        kernel = resolve_kernel_config(sample, settings.kernel)
        _, d0 = prepare_initial_density(sample, settings, seed)
        yield sample, kernel, d0


def test_flow_invariants_on_dgp1_samples():
    cfg = FlowConfig(delta=0.01, max_iters=100, delta_n=None, stopping=StoppingConfig(enabled=set()))
    for sample, kernel, d0 in _dgp1_runs(50):
        trace = run_flow(d0, sample, cfg, kernel)
        assert trace.iterations == 100
        failed = [row.name.value for row in trace.invariants if not row.passed]
        assert failed == []


def test_finite_time_score_target():
    cfg = FlowConfig(delta=0.01, max_iters=2000, delta_n=1e-6, stopping=StoppingConfig(enabled=set()))
    reached = 0
    for sample, kernel, d0 in _dgp1_runs(50):
        trace = run_flow(d0, sample, cfg, kernel)
        reached += trace.stop_reason == StopRule.SCORE_TARGET
    assert reached == 50


def test_mass_drift_is_second_order_in_step():
    for sample, kernel, d0 in _dgp1_runs(10):
        state = build_state(d0, sample, kernel)
        drift = {}
        for delta in (0.02, 0.01):
            cfg = FlowConfig(delta=delta, delta_n=None)
            drift[delta] = abs(euler_step(state, cfg).mass_drift)
        assert 3.0 <= drift[0.02] / drift[0.01] <= 5.0


def test_eif_residual_reduced_by_flow():
    n, reps = 300, 100
    settings = AppSettings.load(overrides={"flow": {"mode": "xfixed"}})
    improved, stopped = 0, []
    for seed in derive_replicate_seeds(7, reps):
        sample = sample_dgp(DGP1, n, seed)
        kernel = resolve_kernel_config(sample, settings.kernel)
        _, d0 = prepare_initial_density(sample, settings, seed)
        trace = run_flow(d0, sample, settings.flow, kernel)
        before = abs(float(np.mean(eif_target(d0, sample, TargetName.ATE))))
        after = abs(float(np.mean(eif_target(trace.final_density, sample, TargetName.ATE))))
        improved += after <= before
        stopped.append(after)

    assert improved >= 0.9 * reps
    assert np.median(stopped) <= 1.5 / np.sqrt(n)


def test_score_decreases_along_flow():
    settings = AppSettings.load()
    sample = sample_dgp(DGP1, 300, seed=31)
    kernel = resolve_kernel_config(sample, settings.kernel)
    _, d0 = prepare_initial_density(sample, settings, 31)
    cfg = FlowConfig(delta=0.01, max_iters=100, delta_n=None, stopping=StoppingConfig(enabled=set()))
    scores = np.array([r.score for r in run_flow(d0, sample, cfg, kernel).records])

    assert len(scores) == 101
    assert np.mean(np.diff(scores) < 0.0) >= 0.95
    assert scores[-1] < scores[0]


def _monte_carlo(dgp: str, golden_dir) -> MonteCarloResult:
    settings = AppSettings.load(
        overrides={
            "simulation": {
                "dgp": dgp,
                "n": 300,
                "reps": 200,
                "jobs": 8,
                "golden_dir": str(golden_dir),
            }
        }
    )
    return run_monte_carlo(settings)


def _row(result: MonteCarloResult, method: Method, parameter: TargetName):
    return next(
        s for s in result.summaries
        if s.method == method and s.parameter == parameter and s.stopping_rule == NO_RULE
    )


def _ate_by_replicate(result: MonteCarloResult, method: Method):
    return {
        r.replicate: e.estimate
        for r in result.replicates
        for e in r.estimates
        if e.method == method and e.parameter == TargetName.ATE and e.estimate is not None
    }


@pytest.fixture(scope="module")
def dgp1_monte_carlo(tmp_path_factory):
    return _monte_carlo("DGP1", tmp_path_factory.mktemp("golden"))


@pytest.fixture(scope="module")
def dgp2_monte_carlo(tmp_path_factory):
    return _monte_carlo("DGP2", tmp_path_factory.mktemp("golden"))


def test_dgp1_monte_carlo_band(dgp1_monte_carlo):
    row = _row(dgp1_monte_carlo, Method.ULFS_KDPE, TargetName.ATE)
    assert abs(row.bias_x100) / 100.0 <= 0.02
    assert 0.04 <= row.rmse <= 0.08

    # 每次重复只运行一次流, 三个目标来自同一停止密度
    assert all(r.flow_runs == 1 for r in dgp1_monte_carlo.replicates if r.error is None)


def test_dgp1_tmle_bias_band(dgp1_monte_carlo):
    row = _row(dgp1_monte_carlo, Method.TMLE_ATE, TargetName.ATE)
    assert abs(row.bias_x100) <= 1.5


def test_dgp1_one_step_improves_on_initial(dgp1_monte_carlo):
    truth = dgp1_monte_carlo.truth.ate
    initial = _ate_by_replicate(dgp1_monte_carlo, Method.INITIAL)
    corrected = _ate_by_replicate(dgp1_monte_carlo, Method.ONE_STEP)
    shared = sorted(set(initial) & set(corrected))

    better = sum(abs(corrected[b] - truth) < abs(initial[b] - truth) for b in shared)
    assert len(shared) >= 190
    assert better >= 0.7 * len(shared)


def test_dgp2_flow_is_more_stable_than_tmle(dgp2_monte_carlo):
    ulfs = _row(dgp2_monte_carlo, Method.ULFS_KDPE, TargetName.ATE)
    tmle = _row(dgp2_monte_carlo, Method.TMLE_ATE, TargetName.ATE)
    assert ulfs.var < tmle.var
    assert _row(dgp2_monte_carlo, Method.ULFS_KDPE, TargetName.OR).rmse < 1.3


def test_oracle_node_doubling_at_full_resolution():
    coarse = compute_truth(DGP1, nodes=10 ** 6)
    fine = compute_truth(DGP1, nodes=2 * 10 ** 6)
    assert abs(coarse.ate - fine.ate) <= 1e-8
    assert abs(coarse.ate - 0.37 / 3) <= 1e-9


def test_parallel_replicates_match_serial(tmp_path):
    overrides = {
        "flow": {"max_iters": 10},
        "simulation": {"dgp": DgpId.DGP2.value, "n": 60, "reps": 4, "golden_dir": str(tmp_path)},
    }
    serial = run_monte_carlo(AppSettings.load(overrides=overrides), jobs=1)
    parallel = run_monte_carlo(AppSettings.load(overrides=overrides), jobs=2)

    assert [s.replicates for s in serial.summaries] == [s.replicates for s in parallel.summaries]
    assert serial.truth == parallel.truth
    assert serial.dgp == parallel.dgp == DgpId.DGP2
