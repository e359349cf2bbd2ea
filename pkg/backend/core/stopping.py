"""
停止规则 SC1-SC5

每条规则是其诊断量的纯函数, 返回 StopDecision。
没有前一迭代时, 平台类条款跳过, 绝对条款照常判定。
"""
from typing import Dict, Optional, Tuple

import numpy as np

from core.config import StoppingConfig
from core.kernel import CenteredKernel, as_sample
from models.enums import STOP_RULE_PRIORITY, StopRule
from models.schemas import StopDecision


# 平台条款的相对系数
PLATEAU_FACTOR = 0.1


def _mean_square_change(curr_log: np.ndarray, prev_log: np.ndarray) -> float:
    """P_n[(log p̂_t - log p̂_s)²]"""
    diff = np.asarray(curr_log, dtype=float) - np.asarray(prev_log, dtype=float)
    return float(np.mean(diff ** 2))


def sc1_density_plateau(
    curr_log: np.ndarray,
    prev_log: Optional[np.ndarray],
    prev_delta: Optional[float],
    cfg: StoppingConfig,
) -> StopDecision:
    """
    SC1 密度平台

    Δ^(p) = P_n[(log p̂_t - log p̂_{t-Δ})²]
    触发条件: Δ^(p) <= δ_p 或 |Δ^(p) - Δ^(p)_prev| <= 0.1 δ_p
    """
    if prev_log is None:
        return StopDecision(fired=False, diagnostics={"delta_p": None})

    delta_p = _mean_square_change(curr_log, prev_log)
    fired = delta_p <= cfg.delta_p
    if not fired and prev_delta is not None:
        fired = abs(delta_p - prev_delta) <= PLATEAU_FACTOR * cfg.delta_p

    return StopDecision(
        fired=fired,
        rule=StopRule.SC1 if fired else None,
        diagnostics={"delta_p": delta_p},
    )


def sc2_score_plateau(s_t: float, s_prev: Optional[float], cfg: StoppingConfig) -> StopDecision:
    """
    SC2 得分平台

    触发条件: |s_t| <= δ_s 或 |s_t - s_{t-Δ}| <= 0.1 δ_s
    """
    fired = abs(s_t) <= cfg.delta_s
    if not fired and s_prev is not None:
        fired = abs(s_t - s_prev) <= PLATEAU_FACTOR * cfg.delta_s

    return StopDecision(
        fired=fired,
        rule=StopRule.SC2 if fired else None,
        diagnostics={"score": float(s_t)},
    )


def direction_norm_sq(
    ck: CenteredKernel,
    alpha: np.ndarray,
    sample,
    gram: Optional[np.ndarray] = None,
) -> float:
    """
    更新方向的RKHS范数平方

    公式: ‖D‖²_H = (1/n²) αᵀ G α
    """
    alpha = np.asarray(alpha, dtype=float)
    if gram is None:
        gram = ck.gram(as_sample(sample))
    n = alpha.shape[0]
    return float(alpha @ gram @ alpha) / n ** 2


def sc3_vanishing_direction(
    ck: CenteredKernel,
    alpha: np.ndarray,
    sample,
    cfg: StoppingConfig,
    gram: Optional[np.ndarray] = None,
) -> StopDecision:
    """
    SC3 更新方向消失

    触发条件: (1/n)‖D‖²_H <= δ_α
    """
    n = np.asarray(alpha).shape[0]
    norm_sq = direction_norm_sq(ck, alpha, sample, gram)
    value = norm_sq / n
    fired = value <= cfg.delta_alpha
    return StopDecision(
        fired=fired,
        rule=StopRule.SC3 if fired else None,
        diagnostics={"direction_norm": value},
    )


def sc4_variance_dominated(
    curr_log: np.ndarray,
    prev_log: Optional[np.ndarray],
    initial_log: np.ndarray,
    n: int,
    cfg: StoppingConfig,
) -> StopDecision:
    """
    SC4 方差主导更新

    Δ^(v) = P_n[(log p̂_t - log p̂_{t-Δ})²]
    Δ^(ℓ) = |P_n[log p̂_t - log p̂_{t-Δ}]|
    触发条件: Δ^(v) <= δ_v, 或 P_n[(log p̂_t - log p̂_0)²] >= k/n 且 Δ^(ℓ) <= δ_ℓ
    """
    cumulative = _mean_square_change(curr_log, initial_log)
    if prev_log is None:
        return StopDecision(
            fired=False,
            diagnostics={"delta_v": None, "delta_ell": None, "cumulative": cumulative},
        )

    delta_v = _mean_square_change(curr_log, prev_log)
    delta_ell = abs(float(np.mean(np.asarray(curr_log) - np.asarray(prev_log))))
    fired = delta_v <= cfg.delta_v or (
        cumulative >= cfg.sc4_multiplier / n and delta_ell <= cfg.delta_ell
    )
    return StopDecision(
        fired=fired,
        rule=StopRule.SC4 if fired else None,
        diagnostics={"delta_v": delta_v, "delta_ell": delta_ell, "cumulative": cumulative},
    )


def sc5_eif_solved(
    eif_curr: Optional[np.ndarray],
    eif_prev: Optional[np.ndarray],
    n: int,
    cfg: StoppingConfig,
) -> StopDecision:
    """
    SC5 EIF近似求解

    触发条件: |P_n φ_t| <= c n^{-1/2} 且 |P_n φ_t| >= |P_n φ_{t-Δ}|
    EIF不可用时不触发
    """
    if eif_curr is None:
        return StopDecision(fired=False, diagnostics={"eif_mean": None})

    curr = abs(float(np.mean(eif_curr)))
    fired = False
    if eif_prev is not None:
        prev = abs(float(np.mean(eif_prev)))
        fired = curr <= cfg.eif_c / np.sqrt(n) and curr >= prev

    return StopDecision(
        fired=fired,
        rule=StopRule.SC5 if fired else None,
        diagnostics={"eif_mean": curr},
    )


def evaluate_stopping(
    cfg: StoppingConfig,
    *,
    ck: CenteredKernel,
    alpha: np.ndarray,
    sample,
    score: float,
    prev_score: Optional[float],
    curr_log: np.ndarray,
    prev_log: Optional[np.ndarray],
    prev_delta_p: Optional[float],
    initial_log: np.ndarray,
    eif_curr: Optional[np.ndarray] = None,
    eif_prev: Optional[np.ndarray] = None,
    gram: Optional[np.ndarray] = None,
) -> Tuple[StopDecision, Dict[str, Optional[float]]]:
    """
    按优先级 SC3 > SC2 > SC1 > SC4 > SC5 判定启用的规则

    Returns:
        (首个触发的规则判定, 全部规则的诊断量)
    """
    n = np.asarray(alpha).shape[0]
    decisions = {
        StopRule.SC1: sc1_density_plateau(curr_log, prev_log, prev_delta_p, cfg),
        StopRule.SC2: sc2_score_plateau(score, prev_score, cfg),
        StopRule.SC3: sc3_vanishing_direction(ck, alpha, sample, cfg, gram=gram),
        StopRule.SC4: sc4_variance_dominated(curr_log, prev_log, initial_log, n, cfg),
        StopRule.SC5: sc5_eif_solved(eif_curr, eif_prev, n, cfg),
    }

    diagnostics: Dict[str, Optional[float]] = {}
    for decision in decisions.values():
        diagnostics.update(decision.diagnostics)

    for rule in STOP_RULE_PRIORITY:
        if rule in cfg.enabled and decisions[rule].fired:
            return decisions[rule], diagnostics

    return StopDecision(fired=False, diagnostics=diagnostics), diagnostics


__all__ = [
    "PLATEAU_FACTOR",
    "sc1_density_plateau",
    "sc2_score_plateau",
    "direction_norm_sq",
    "sc3_vanishing_direction",
    "sc4_variance_dominated",
    "sc5_eif_solved",
    "evaluate_stopping",
]
