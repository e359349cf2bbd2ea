"""
数据生成过程、真值预言机与蒙特卡洛框架测试
"""
import numpy as np
import pytest

from core.dgp import (
    DGP1,
    DGP2,
    DataGeneratingProcess,
    compute_truth,
    sample_dgp,
    sample_dgp1,
    true_value_oracle,
)
from core.exceptions import DgpValidityError
from models.enums import DgpId, Method, StopRule, TargetName
from models.schemas import ReplicateEstimate, ReplicateReport, TargetEstimates
from utils.logger import setup_logger
from services.simulation_service import (
    NO_RULE,
    _replicate_job,
    derive_replicate_seeds,
    rule_iteration_limits,
    run_monte_carlo,
    run_replicate,
    summarize,
)


def _constant_dgp(propensity: float = 0.5) -> DataGeneratingProcess:
    return DataGeneratingProcess(
        name="CONSTANT",
        sample_x=lambda rng, n: rng.uniform(0.0, 1.0, size=n),
        propensity=lambda x: np.full(x.shape[0], propensity),
        outcome_mean=lambda a, x: np.full(x.shape[0], 0.3),
        quadrature=((1.0, 0.0, 1.0),),
    )


def test_replicate_seeds_are_deterministic_and_distinct():
    seeds = derive_replicate_seeds(42, 50)
    assert seeds == derive_replicate_seeds(42, 50)
    assert len(set(seeds)) == 50
    assert all(0 <= s < 2 ** 64 for s in seeds)
    assert derive_replicate_seeds(42, 5) == seeds[:5]
    assert seeds != derive_replicate_seeds(43, 50)


@pytest.mark.parametrize("dgp, low, high", [(DGP1, 0.0, 1.0), (DGP2, -2.0, 2.0)])
def test_sample_dgp(dgp, low, high):
    sample = sample_dgp(dgp, 500, seed=3)
    again = sample_dgp(dgp, 500, seed=3)

    assert sample.n == 500 and sample.d == 1
    assert np.array_equal(sample.x, again.x)
    assert np.array_equal(sample.a, again.a) and np.array_equal(sample.y, again.y)
    assert np.all((sample.x >= low) & (sample.x <= high))
    assert set(np.unique(sample.a)) == {0, 1}


def test_dgp2_mixture_has_wide_component():
    sample = sample_dgp(DGP2, 5000, seed=0)
    outside = np.mean(np.abs(sample.x[:, 0]) > 1.0)
    # 0.1 · P(|U(-2,2)| > 1) = 0.05
    assert 0.03 < outside < 0.07


def test_invalid_bernoulli_mean_rejected():
    with pytest.raises(DgpValidityError):
        sample_dgp(_constant_dgp(propensity=1.0), 10, seed=0)


def test_dgp1_truth_closed_form():
    truth = compute_truth(DGP1, nodes=200_000)
    assert truth.ate == pytest.approx(0.37 / 3, abs=1e-9)


@pytest.mark.parametrize("dgp", [DGP1, DGP2])
def test_truth_stable_under_node_doubling(dgp):
    coarse = compute_truth(dgp, nodes=100_000)
    fine = compute_truth(dgp, nodes=200_000)
    for name in TargetName:
        assert coarse.get(name) == pytest.approx(fine.get(name), abs=1e-8)


def test_constant_outcome_truth():
    truth = compute_truth(_constant_dgp(), nodes=1000)
    assert truth.ate == pytest.approx(0.0, abs=1e-12)
    assert truth.rr == pytest.approx(1.0)
    assert truth.or_ == pytest.approx(1.0)


def test_oracle_is_cached():
    first = true_value_oracle(DgpId.DGP2, 10_000)
    assert true_value_oracle(DgpId.DGP2, 10_000) is first
    sample, truth = sample_dgp1(20, seed=1)
    assert sample.n == 20
    assert truth.ate == pytest.approx(0.37 / 3, abs=1e-9)


def _report(replicate: int, ate: float, converged: bool, max_iters: int = 5) -> ReplicateReport:
    flow = {"method": Method.ULFS_KDPE, "max_iters": max_iters}
    return ReplicateReport(
        replicate=replicate,
        seed=replicate,
        estimates=[
            ReplicateEstimate(parameter=TargetName.ATE, estimate=ate, converged=converged, **flow),
            ReplicateEstimate(parameter=TargetName.RR, estimate=None, **flow),
        ],
    )


def test_summarize_moments(settings):
    settings.simulation.methods = [Method.ULFS_KDPE]
    truth = TargetEstimates.from_means(mu0=0.3, mu1=0.6)
    reports = [_report(0, 0.3, True), _report(1, 0.5, False)]

    summaries = summarize(DgpId.DGP1, reports, truth, settings)
    assert [(s.parameter, s.stopping_rule) for s in summaries] == [
        (TargetName.ATE, NO_RULE),
        (TargetName.RR, NO_RULE),
        (TargetName.OR, NO_RULE),
    ]

    ate = summaries[0]
    assert ate.n_converged == 1
    assert ate.n_used == 2
    assert ate.bias_x100 == pytest.approx(10.0)
    assert ate.var == pytest.approx(0.01)
    assert ate.rmse == pytest.approx(np.sqrt(0.02))
    assert ate.replicate_ids == [0, 1]

    assert summaries[1].n_used == 0
    assert np.isnan(summaries[1].rmse)


def test_run_replicate_runs_one_flow(settings):
    report = run_replicate(DgpId.DGP1, 60, seed=123, replicate=0, settings=settings)

    assert report.error is None
    assert report.flow_runs == 1
    assert report.iterations is not None and report.iterations <= 5
    methods = [e.method for e in report.estimates]
    assert methods.count(Method.ULFS_KDPE) == 3
    assert methods.count(Method.INITIAL) == 3
    assert methods.count(Method.ONE_STEP) == 3
    assert methods.count(Method.TMLE_ATE) == 1
    assert all(e.estimate is not None for e in report.estimates)


def test_run_replicate_compare_rules(settings):
    settings.simulation.compare_rules = True
    settings.simulation.methods = [Method.ULFS_KDPE]
    report = run_replicate(DgpId.DGP1, 60, seed=5, replicate=1, settings=settings)

    rules = {e.stopping_rule for e in report.estimates}
    assert rules == {NO_RULE, "sc1", "sc2", "sc3", "sc4", "sc5"}
    assert report.flow_runs == 1

    # 逐规则的流关闭得分目标, 只能因该规则或迭代上限停止
    for est in report.estimates:
        assert est.max_iters == settings.flow.max_iters
        if est.stopping_rule != NO_RULE:
            assert est.stop_reason in {StopRule(est.stopping_rule), StopRule.MAX_ITERS}
            assert est.converged == (est.stop_reason != StopRule.MAX_ITERS)


def test_run_monte_carlo_is_reproducible(settings):
    first = run_monte_carlo(settings)
    second = run_monte_carlo(settings)

    assert first.failures == 0
    assert len(first.replicates) == 2
    assert len(first.summaries) == 10
    assert [s.replicates for s in first.summaries] == [s.replicates for s in second.summaries]
    assert first.truth.ate == pytest.approx(0.37 / 3, abs=1e-6)


def test_replicate_job_matches_direct_call(settings):
    direct = run_replicate(DgpId.DGP2, 50, seed=11, replicate=3, settings=settings)
    try:
        # 父进程号不匹配时按子进程配置日志
        job = _replicate_job(-1, DgpId.DGP2, 50, 11, 3, settings)
    finally:
        setup_logger(settings.log)

    assert job.model_dump(exclude={"wall_time"}) == direct.model_dump(exclude={"wall_time"})


def test_rule_iteration_limits(settings):
    assert rule_iteration_limits(settings) == []
    settings.simulation.compare_rules = True
    assert rule_iteration_limits(settings) == [5]
    settings.simulation.compare_rules = False
    settings.simulation.iteration_limits = [3, 2]
    assert rule_iteration_limits(settings) == [3, 2]


def test_iteration_limit_sweep(settings):
    settings.simulation.methods = [Method.ULFS_KDPE]
    settings.simulation.iteration_limits = [2, 3]
    report = run_replicate(DgpId.DGP1, 50, seed=21, replicate=0, settings=settings)

    sweep = [e for e in report.estimates if e.stopping_rule != NO_RULE]
    assert len(sweep) == 2 * 5 * 3
    assert {e.max_iters for e in sweep} == {2, 3}
    assert all(e.stop_reason != StopRule.SCORE_TARGET for e in sweep)

    truth = TargetEstimates.from_means(mu0=0.3, mu1=0.6)
    summaries = summarize(DgpId.DGP1, [report], truth, settings)
    keys = [(s.stopping_rule, s.max_iters) for s in summaries if s.parameter == TargetName.ATE]
    assert keys == [(NO_RULE, 5)] + [
        (rule, limit) for limit in (2, 3) for rule in ("sc1", "sc2", "sc3", "sc4", "sc5")
    ]
    assert all(s.n_used == 1 for s in summaries)
    assert all(s.n_converged <= 1 for s in summaries)
