"""
由数据构造估计模型与置信区间集合

截断估计：每个列表中 (s, a) 只计入前 m̄^st(s, a) 次出现。
生成模型估计：每个 (s, a) 独立抽 N 次。
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import numpy.typing as npt

from horizon_rl.collector import QuantileTable, check_dims
from horizon_rl.errors import DimensionMismatchError, InvariantViolationError
from horizon_rl.mdp_core import FiniteMdp, TrajectoryDataset
from horizon_rl.sim_env import GenerativeSampler, RngStream

PROVENANCES = ("truncated-episodic", "generative", "exact")

ROW_TOL = 1e-10

CONTAINS_TOL = 1e-12


def _readonly(array: npt.ArrayLike, dtype: npt.DTypeLike = np.float64) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class EstimatedModel:
    """估计模型 (P̂, R̂, μ̂, m_D)

    counts 为 None 表示来自真实模型（provenance="exact"），此时每行都必须是分布。
    """

    transition: np.ndarray
    reward: np.ndarray
    initial: np.ndarray
    counts: Optional[np.ndarray]
    horizon: int
    provenance: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "transition", _readonly(self.transition))
        object.__setattr__(self, "reward", _readonly(self.reward))
        object.__setattr__(self, "initial", _readonly(self.initial))
        object.__setattr__(self, "horizon", int(self.horizon))
        if self.counts is not None:
            object.__setattr__(self, "counts", _readonly(self.counts, np.int64))
        self._validate()

    def _validate(self) -> None:
        if self.provenance not in PROVENANCES:
            raise InvariantViolationError(f"未知来源 {self.provenance}")
        shape = self.transition.shape
        if self.transition.ndim != 3 or shape[0] != shape[2]:
            raise InvariantViolationError("P̂ 形状应为 (S, A, S)")
        n_states, n_actions, _ = shape
        if (
            self.reward.shape != (n_states, n_actions)
            or self.initial.shape != (n_states,)
        ):
            raise InvariantViolationError("R̂ 或 μ̂ 形状与 P̂ 不一致")
        if self.horizon < 1:
            raise InvariantViolationError("horizon 必须为正")
        if np.any(self.transition < 0) or np.any(self.initial < 0):
            raise InvariantViolationError("估计概率存在负值")
        if np.any(self.reward < 0) or np.any(self.reward > 1):
            raise InvariantViolationError("R̂ 不在 [0,1] 内")
        if abs(self.initial.sum() - 1.0) > ROW_TOL:
            raise InvariantViolationError("μ̂ 概率和不为1")

        sums = self.transition.sum(axis=2)
        if self.counts is None:
            if self.provenance != "exact":
                raise InvariantViolationError("估计模型必须给出 m_D")
            visited = np.ones((n_states, n_actions), dtype=bool)
        else:
            if self.counts.shape != (n_states, n_actions) or np.any(self.counts < 0):
                raise InvariantViolationError("m_D 形状或取值非法")
            visited = self.counts > 0
        bad = np.argwhere(visited & (np.abs(sums - 1.0) > ROW_TOL))
        if bad.size:
            s, a = bad[0]
            raise InvariantViolationError(f"P̂[{s},{a}] 概率和为 {sums[s, a]!r}")
        bad = np.argwhere(~visited & (sums != 0.0))
        if bad.size:
            s, a = bad[0]
            raise InvariantViolationError(f"P̂[{s},{a}] 未访问但不全为0")

    @classmethod
    def from_mdp(cls, mdp: FiniteMdp) -> "EstimatedModel":
        return cls(
            mdp.transition, mdp.mean_reward, mdp.initial, None, mdp.horizon, "exact"
        )

    @property
    def n_states(self) -> int:
        return int(self.transition.shape[0])

    @property
    def n_actions(self) -> int:
        return int(self.transition.shape[1])

    def visited(self) -> np.ndarray:
        if self.counts is None:
            return np.ones((self.n_states, self.n_actions), dtype=bool)
        return self.counts > 0

    def to_mdp(self, horizon: Optional[int] = None) -> FiniteMdp:
        """转为奖励确定的 FiniteMdp，要求每行都是分布"""
        if not self.visited().all():
            raise InvariantViolationError("存在未访问的 (s, a)，无法转为完整MDP")
        horizon = self.horizon if horizon is None else horizon
        return FiniteMdp.with_point_rewards(
            self.transition, self.reward, self.initial, horizon
        )


@dataclass(frozen=True, eq=False)
class IntervalModelSet:
    """以 center 为中心的区间模型集合，成员的奖励固定为 R̂

    reward_width 只用于报告误差证书，不参与集合成员判定。
    """

    center: EstimatedModel
    transition_width: np.ndarray
    initial_width: np.ndarray
    reward_width: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        center = self.center
        shape = (center.n_states, center.n_actions)
        reward_width = self.reward_width
        if reward_width is None:
            reward_width = np.zeros(shape)
        object.__setattr__(self, "transition_width", _readonly(self.transition_width))
        object.__setattr__(self, "initial_width", _readonly(self.initial_width))
        object.__setattr__(self, "reward_width", _readonly(reward_width))
        if self.transition_width.shape != center.transition.shape:
            raise DimensionMismatchError("w_P 形状与 P̂ 不一致")
        if self.initial_width.shape != center.initial.shape:
            raise DimensionMismatchError("w_mu 形状与 μ̂ 不一致")
        if self.reward_width.shape != shape:
            raise DimensionMismatchError("w_R 形状与 R̂ 不一致")
        for name, width in (
            ("w_P", self.transition_width),
            ("w_mu", self.initial_width),
            ("w_R", self.reward_width),
        ):
            if np.any(~np.isfinite(width)) or np.any(width < 0):
                raise InvariantViolationError(f"{name} 必须非负")

    @classmethod
    def exact(cls, mdp: FiniteMdp) -> "IntervalModelSet":
        """宽度为0、中心为真实模型的集合"""
        center = EstimatedModel.from_mdp(mdp)
        return cls(center, np.zeros(center.transition.shape), np.zeros(center.n_states))

    @property
    def horizon(self) -> int:
        return self.center.horizon

    @property
    def n_states(self) -> int:
        return self.center.n_states

    @property
    def n_actions(self) -> int:
        return self.center.n_actions

    def scaled(self, factor: float) -> "IntervalModelSet":
        return IntervalModelSet(
            self.center,
            self.transition_width * factor,
            self.initial_width * factor,
            self.reward_width * factor,
        )


# ---------------------------------------------------------------------------
# 估计


def truncation_mask(dataset: TrajectoryDataset, quantiles: QuantileTable) -> np.ndarray:
    """Trunc_{i,t}：列表 i 中位置 t 之前 (s, a) 出现次数小于 m̄^st(s, a) 时为真"""
    check_dims(dataset, quantiles)
    n_actions = dataset.n_actions
    pair = dataset.states.astype(np.int64) * n_actions + dataset.actions
    limits = quantiles.values.reshape(-1)
    keep = np.zeros(pair.shape, dtype=bool)
    for k in range(limits.shape[0]):
        hit = pair == k
        prior = np.cumsum(hit, axis=1) - hit
        keep |= hit & (prior < limits[k])
    return keep


def build_truncated_model(
    dataset: TrajectoryDataset, quantiles: QuantileTable
) -> EstimatedModel:
    """截断经验模型，分母为 max{1, m_D}，μ̂ 取每个列表第0个元组的状态"""
    keep = truncation_mask(dataset, quantiles)
    n_states, n_actions = dataset.n_states, dataset.n_actions

    states = dataset.states[keep].astype(np.int64)
    actions = dataset.actions[keep].astype(np.int64)
    next_states = dataset.next_states[keep].astype(np.int64)
    rewards = dataset.rewards[keep]

    counts = np.zeros((n_states, n_actions), dtype=np.int64)
    np.add.at(counts, (states, actions), 1)
    transitions = np.zeros((n_states, n_actions, n_states))
    np.add.at(transitions, (states, actions, next_states), 1.0)
    reward_sums = np.zeros((n_states, n_actions))
    np.add.at(reward_sums, (states, actions), rewards)

    denom = np.maximum(counts, 1)
    first = dataset.states[:, 0].astype(np.int64)
    initial = np.bincount(first, minlength=n_states) / dataset.n_lists
    return EstimatedModel(
        transitions / denom[:, :, None],
        np.clip(reward_sums / denom, 0.0, 1.0),
        initial,
        counts,
        dataset.horizon,
        "truncated-episodic",
    )


def build_generative_model(
    sampler: GenerativeSampler, n: int, rng: RngStream
) -> EstimatedModel:
    """每个 (s, a) 独立抽 N 次得到 P̂、R̂，再从 mu 抽 N 次得到 μ̂，m_D ≡ N"""
    if n < 1:
        raise InvariantViolationError("N 必须为正")
    mdp = sampler.mdp
    n_states, n_actions = mdp.n_states, mdp.n_actions
    transition = np.zeros((n_states, n_actions, n_states))
    reward = np.zeros((n_states, n_actions))
    for s in range(n_states):
        for a in range(n_actions):
            stream = rng.substream(s * n_actions + a)
            rewards, next_states = sampler.query_batch(s, a, n, stream)
            transition[s, a] = np.bincount(next_states, minlength=n_states) / n
            reward[s, a] = rewards.mean()
    starts = sampler.sample_initial(n, rng.substream(n_states * n_actions))
    initial = np.bincount(starts, minlength=n_states) / n
    counts = np.full((n_states, n_actions), n, dtype=np.int64)
    return EstimatedModel(
        transition,
        np.clip(reward, 0.0, 1.0),
        initial,
        counts,
        mdp.horizon,
        "generative",
    )


# ---------------------------------------------------------------------------
# 置信区间


def transition_log_term(n_states: int, n_actions: int, delta: float) -> float:
    return math.log(18.0 * n_states**2 * n_actions / delta)


def reward_log_term(n_states: int, n_actions: int, delta: float) -> float:
    return math.log(18.0 * n_states * n_actions / delta)


def confidence_widths(
    model: EstimatedModel,
    quantiles: QuantileTable,
    n_lists: int,
    epsilon_est: float,
    delta: float,
) -> IntervalModelSet:
    """按截断估计的置信区间公式计算半宽

    w_P = max{512·L/(m̄·N·eps), 32·sqrt(P̂·L/(m̄·N·eps))}，L = log(18|S|²|A|/δ)；
    w_mu = sqrt(log(18|S|/δ)/N)；m̄ = 0 或 m_D = 0 的行宽度为1（整个单纯形）。
    w_R = 8·sqrt(L_R/(m̄·N·eps)) + 8·L_R/(m̄·N·eps)，L_R = log(18|S||A|/δ)。
    """
    if n_lists < 1:
        raise InvariantViolationError("N 必须为正")
    if not (0.0 < epsilon_est <= 1.0 and 0.0 < delta <= 1.0):
        raise InvariantViolationError("eps_est 与 delta 必须在 (0,1] 内")
    if quantiles.values.shape != (model.n_states, model.n_actions):
        raise DimensionMismatchError("分位数表与模型维度不一致")

    n_states, n_actions = model.n_states, model.n_actions
    mbar = quantiles.values.astype(np.float64)
    visited = (mbar > 0) & model.visited()
    scale = np.where(visited, mbar, 1.0) * n_lists * epsilon_est

    log_p = transition_log_term(n_states, n_actions, delta)
    ratio = (log_p / scale)[:, :, None]
    width = np.maximum(512.0 * ratio, 32.0 * np.sqrt(model.transition * ratio))
    width = np.where(visited[:, :, None], width, 1.0)

    log_r = reward_log_term(n_states, n_actions, delta)
    reward_width = 8.0 * np.sqrt(log_r / scale) + 8.0 * log_r / scale
    reward_width = np.where(visited, reward_width, 1.0)

    initial_radius = math.sqrt(math.log(18.0 * n_states / delta) / n_lists)
    initial_width = np.full(n_states, initial_radius)
    return IntervalModelSet(model, width, initial_width, reward_width)


def contains(model_set: IntervalModelSet, mdp: FiniteMdp) -> bool:
    """真实模型的 P 与 mu 是否逐项落在区间内，奖励不参与判断"""
    center = model_set.center
    if (mdp.n_states, mdp.n_actions) != (center.n_states, center.n_actions):
        raise DimensionMismatchError("模型维度与集合不一致")
    p_error = np.abs(center.transition - mdp.transition)
    mu_error = np.abs(center.initial - mdp.initial)
    p_ok = np.all(p_error <= model_set.transition_width + CONTAINS_TOL)
    mu_ok = np.all(mu_error <= model_set.initial_width + CONTAINS_TOL)
    return bool(p_ok and mu_ok)
