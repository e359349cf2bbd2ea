"""
干扰函数学习服务
估计倾向得分 ê(1|x) 与结局回归 q̂(1|a,x), 用于构建初始工作密度

候选学习器: 样本均值、逻辑回归、Nadaraya-Watson平滑器
堆叠: k折交叉验证对数损失在单纯形上最小化 (指数梯度)
"""
import warnings
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import softmax
from sklearn.base import BaseEstimator, clone
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LogisticRegression
from sklearn.model_selection import KFold

from core.config import NuisanceSettings
from core.exceptions import NuisanceFitError
from core.sample import Sample
from models.enums import LearnerId
from utils.formulas import PREDICTION_CLIP, bernoulli_log_loss, clamp_probability
from utils.logger import logger


# 判定完全分离的系数量级
SEPARATION_COEF_LIMIT = 1e3

# 堆叠损失相对单个学习器的容差
STACK_LOSS_TOLERANCE = 1e-6


def _as_features(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x


# ==================== 候选学习器 ====================

class MeanLearner(BaseEstimator):
    """常数预测器: 截断后的样本均值"""

    def fit(self, X, y):
        y = np.asarray(y, dtype=float)
        if y.size == 0:
            raise NuisanceFitError("cannot fit mean learner on empty labels")
        self.mean_ = float(clamp_probability(np.mean(y)))
        return self

    def predict(self, X) -> np.ndarray:
        return np.full(_as_features(X).shape[0], self.mean_)


class LogisticLearner(BaseEstimator):
    """逻辑回归 (lbfgs, 无惩罚)

    完全分离或未收敛时改用岭惩罚 λ 重新拟合; 标签全相同时退回均值模型
    """

    def __init__(self, ridge_lambda: float = 1e-4, max_iter: int = 200, tol: float = 1e-8):
        self.ridge_lambda = ridge_lambda
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y):
        X = _as_features(X)
        y = np.asarray(y, dtype=int)
        if not np.all(np.isfinite(X)):
            raise NuisanceFitError("non-finite features in logistic fit")

        self.ridge_fallback_ = False
        self.mean_fallback_ = None
        if np.unique(y).size < 2:
            logger.warning("逻辑回归标签全相同, 退回均值模型")
            self.mean_fallback_ = MeanLearner().fit(X, y)
            return self

        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ConvergenceWarning)
            model = LogisticRegression(
                penalty=None, solver="lbfgs", tol=self.tol, max_iter=self.max_iter
            ).fit(X, y)

        not_converged = any(issubclass(w.category, ConvergenceWarning) for w in caught)
        separated = float(np.max(np.abs(model.coef_))) > SEPARATION_COEF_LIMIT
        if not_converged or separated:
            # sklearn 目标为 C·Σloss + ½‖β‖², 取 C = 1/(λn) 等价于 mean loss + (λ/2)‖β‖²
            logger.warning(
                f"逻辑回归{'未收敛' if not_converged else '完全分离'}, "
                f"改用岭惩罚 λ={self.ridge_lambda}"
            )
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                model = LogisticRegression(
                    penalty="l2",
                    C=1.0 / (self.ridge_lambda * X.shape[0]),
                    solver="lbfgs",
                    tol=self.tol,
                    max_iter=self.max_iter,
                ).fit(X, y)
            self.ridge_fallback_ = True

        self.model_ = model
        return self

    def predict(self, X) -> np.ndarray:
        if self.mean_fallback_ is not None:
            return self.mean_fallback_.predict(X)
        return clamp_probability(self.model_.predict_proba(_as_features(X))[:, 1])


class NadarayaWatsonLearner(BaseEstimator):
    """Nadaraya-Watson平滑器 (高斯权重)"""

    def __init__(self, bandwidth: float = 0.1):
        self.bandwidth = bandwidth

    def fit(self, X, y):
        if self.bandwidth <= 0:
            raise NuisanceFitError(f"bandwidth must be positive, got {self.bandwidth}")
        self.X_ = _as_features(X)
        self.y_ = np.asarray(y, dtype=float)
        return self

    def predict(self, X) -> np.ndarray:
        sq = cdist(_as_features(X), self.X_, metric="sqeuclidean")
        # softmax 对每行减去最大值, 远离样本时不下溢
        weights = softmax(-sq / (2.0 * self.bandwidth ** 2), axis=1)
        return clamp_probability(weights @ self.y_)


def make_learner(learner_id: LearnerId, settings: NuisanceSettings) -> BaseEstimator:
    """按标识构建候选学习器"""
    learner_id = LearnerId(learner_id)
    if learner_id == LearnerId.MEAN:
        return MeanLearner()
    if learner_id == LearnerId.LOGISTIC:
        return LogisticLearner(
            ridge_lambda=settings.ridge_lambda,
            max_iter=settings.logistic_max_iter,
            tol=settings.logistic_tol,
        )
    return NadarayaWatsonLearner(bandwidth=settings.nw_bandwidth)


# ==================== 堆叠 ====================

def _stack_loss_gradient(y: np.ndarray, preds: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """交叉验证对数损失对单纯形权重的梯度"""
    p = clamp_probability(preds @ weights)
    residual = y / p - (1.0 - y) / (1.0 - p)
    return -(preds * residual[:, None]).mean(axis=0)


def exponentiated_gradient_weights(
    y: np.ndarray,
    preds: np.ndarray,
    steps: int = 500,
    step_size: float = 0.1,
) -> np.ndarray:
    """
    单纯形上最小化对数损失的指数梯度迭代

    公式: w ← w · exp(-η ∇L(w)), 再归一化
    """
    n_learners = preds.shape[1]
    weights = np.full(n_learners, 1.0 / n_learners)
    for _ in range(steps):
        grad = _stack_loss_gradient(y, preds, weights)
        weights = weights * np.exp(-step_size * (grad - grad.min()))
        weights = weights / weights.sum()
    return weights


class StackedLearner(BaseEstimator):
    """凸组合堆叠学习器

    交叉验证预测上用指数梯度选择单纯形权重; 若不如最好的单个学习器, 退回该顶点
    """

    def __init__(
        self,
        learners: Sequence[BaseEstimator] = (),
        names: Optional[Sequence[str]] = None,
        k_folds: int = 5,
        seed: int = 0,
        eg_steps: int = 500,
        eg_step_size: float = 0.1,
    ):
        self.learners = learners
        self.names = names
        self.k_folds = k_folds
        self.seed = seed
        self.eg_steps = eg_steps
        self.eg_step_size = eg_step_size

    def fit(self, X, y):
        X = _as_features(X)
        y = np.asarray(y, dtype=float)
        n = X.shape[0]
        if self.k_folds < 2:
            raise NuisanceFitError(f"k_folds must be at least 2, got {self.k_folds}")
        if n < self.k_folds:
            raise NuisanceFitError(f"{n} observations cannot fill {self.k_folds} folds")

        names = list(self.names or [type(l).__name__ for l in self.learners])
        folds = list(
            KFold(n_splits=self.k_folds, shuffle=True, random_state=self.seed % 2 ** 32).split(X)
        )

        cv_columns: List[np.ndarray] = []
        kept: List[int] = []
        self.excluded_: List[str] = []
        for idx, learner in enumerate(self.learners):
            column = np.empty(n)
            try:
                for train, test in folds:
                    column[test] = clone(learner).fit(X[train], y[train]).predict(X[test])
            except Exception as e:
                logger.warning(f"学习器 {names[idx]} 拟合失败, 已排除: {e}")
                self.excluded_.append(names[idx])
                continue
            cv_columns.append(clamp_probability(column))
            kept.append(idx)

        if not kept:
            raise NuisanceFitError("every candidate learner failed")

        preds = np.column_stack(cv_columns)
        self.cv_risks_: Dict[str, float] = {
            names[idx]: bernoulli_log_loss(y, preds[:, j]) for j, idx in enumerate(kept)
        }

        weights = exponentiated_gradient_weights(y, preds, self.eg_steps, self.eg_step_size)
        stack_risk = bernoulli_log_loss(y, preds @ weights)
        best = int(np.argmin(list(self.cv_risks_.values())))
        best_risk = list(self.cv_risks_.values())[best]
        if stack_risk > best_risk + STACK_LOSS_TOLERANCE:
            weights = np.eye(len(kept))[best]
            stack_risk = best_risk

        self.weights_ = weights
        self.cv_risk_ = stack_risk
        self.names_ = [names[idx] for idx in kept]
        self.fitted_ = [clone(self.learners[idx]).fit(X, y) for idx in kept]
        return self

    def predict(self, X) -> np.ndarray:
        preds = np.column_stack([learner.predict(X) for learner in self.fitted_])
        return clamp_probability(preds @ self.weights_)

    @property
    def weight_map(self) -> Dict[str, float]:
        return {name: float(w) for name, w in zip(self.names_, self.weights_)}


# ==================== 拟合入口 ====================

def fit_mean(labels) -> MeanLearner:
    """常数学习器"""
    labels = np.asarray(labels, dtype=float)
    return MeanLearner().fit(np.zeros((labels.size, 1)), labels)


def fit_logistic(features, labels, settings: Optional[NuisanceSettings] = None) -> LogisticLearner:
    """逻辑回归学习器"""
    settings = settings or NuisanceSettings()
    return make_learner(LearnerId.LOGISTIC, settings).fit(features, labels)


def fit_nw_smoother(x, labels, bandwidth: float) -> NadarayaWatsonLearner:
    """Nadaraya-Watson学习器"""
    return NadarayaWatsonLearner(bandwidth=bandwidth).fit(x, labels)


def fit_stacked(
    x,
    labels,
    learners: Sequence[LearnerId],
    k_folds: int = 5,
    seed: int = 0,
    settings: Optional[NuisanceSettings] = None,
) -> StackedLearner:
    """
    堆叠学习器

    Args:
        x: 特征
        labels: 二值标签
        learners: 候选学习器标识
        k_folds: 折数
        seed: 折分配种子
        settings: 学习器超参数

    Returns:
        已拟合的 StackedLearner
    """
    settings = settings or NuisanceSettings()
    return StackedLearner(
        learners=[make_learner(lid, settings) for lid in learners],
        names=[LearnerId(lid).value for lid in learners],
        k_folds=k_folds,
        seed=seed,
        eg_steps=settings.eg_steps,
        eg_step_size=settings.eg_step_size,
    ).fit(x, labels)


@dataclass
class NuisanceFit:
    """干扰函数拟合结果

    propensity_model 以 x 为特征, outcome_model 以 [x, a] 为特征
    """

    propensity_model: BaseEstimator
    outcome_model: BaseEstimator
    learner_id: str

    def propensity(self, x) -> np.ndarray:
        """ê(1|x)"""
        return clamp_probability(self.propensity_model.predict(_as_features(x)), PREDICTION_CLIP)

    def outcome(self, x, a: int) -> np.ndarray:
        """q̂(1|a,x)"""
        x = _as_features(x)
        features = np.column_stack([x, np.full(x.shape[0], float(a))])
        return clamp_probability(self.outcome_model.predict(features), PREDICTION_CLIP)


def fit_nuisance(sample: Sample, settings: NuisanceSettings, seed: int = 0) -> NuisanceFit:
    """
    拟合倾向得分与结局回归

    Args:
        sample: 观测样本
        settings: 学习器配置
        seed: 折分配种子

    Returns:
        NuisanceFit
    """
    learners = list(settings.learners)
    learner_id = "stack(" + "+".join(LearnerId(l).value for l in learners) + ")"
    logger.info(f"开始拟合干扰函数 - 学习器: {learner_id}, n: {sample.n}, 折数: {settings.k_folds}")

    propensity_model = fit_stacked(sample.x, sample.a, learners, settings.k_folds, seed, settings)
    outcome_features = np.column_stack([sample.x, sample.a.astype(float)])
    outcome_model = fit_stacked(outcome_features, sample.y, learners, settings.k_folds, seed, settings)

    logger.info(
        f"干扰函数拟合完成 - 倾向得分权重: {propensity_model.weight_map}, "
        f"结局回归权重: {outcome_model.weight_map}"
    )
    return NuisanceFit(
        propensity_model=propensity_model,
        outcome_model=outcome_model,
        learner_id=learner_id,
    )


__all__ = [
    "MeanLearner",
    "LogisticLearner",
    "NadarayaWatsonLearner",
    "StackedLearner",
    "make_learner",
    "exponentiated_gradient_weights",
    "fit_mean",
    "fit_logistic",
    "fit_nw_smoother",
    "fit_stacked",
    "NuisanceFit",
    "fit_nuisance",
]
