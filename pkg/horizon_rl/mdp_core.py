"""
MDP 基础类型与结构校验

所有类型构造后只读（numpy数组设置为不可写），可以在多个读者之间共享。
"""
from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass
from typing import Any, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from horizon_rl.errors import (
    CapExceededError,
    InvariantViolationError,
    PolicyError,
)
from horizon_rl.settings import SETTINGS

PROB_TOL = 1e-12

# 同值动作的判定容差，平局时取最小动作编号
TIE_TOL = 1e-12


def _frozen(array: npt.ArrayLike, dtype: npt.DTypeLike) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _check_distribution(vec: np.ndarray, name: str) -> None:
    if np.any(~np.isfinite(vec)) or np.any(vec < 0.0) or np.any(vec > 1.0):
        raise InvariantViolationError(f"{name} 存在不在[0,1]内的概率")
    total = float(vec.sum())
    if abs(total - 1.0) > PROB_TOL:
        raise InvariantViolationError(f"{name} 概率和为 {total!r}，不等于1")


def episodes_per_list(n_states: int, n_actions: int) -> int:
    """采样调度中一个列表包含的回合数 |S||A|·|A|^{2|S|}"""
    return n_states * n_actions * n_actions ** (2 * n_states)


def schedule_length(n_states: int, n_actions: int, horizon: int) -> int:
    return episodes_per_list(n_states, n_actions) * horizon


def greedy_actions(q_values: np.ndarray) -> np.ndarray:
    """按行取最大值对应的动作，平局取最小编号"""
    best = q_values.max(axis=-1, keepdims=True)
    return np.argmax(q_values >= best - TIE_TOL, axis=-1)


@dataclass(frozen=True, eq=False)
class FiniteMdp:
    """有限时域表格MDP (S, A, P, R, H, mu)

    奖励是[0,1]上的有限离散分布，按 (s, a) 存储为补零对齐的
    支撑点数组 reward_values 与概率数组 reward_probs，形状 (S, A, K)。
    """

    transition: np.ndarray
    reward_values: np.ndarray
    reward_probs: np.ndarray
    initial: np.ndarray
    horizon: int
    assume_bounded_total_reward: bool = False

    def __post_init__(self) -> None:
        for name in ("transition", "reward_values", "reward_probs"):
            object.__setattr__(self, name, _frozen(getattr(self, name), np.float64))
        object.__setattr__(self, "initial", _frozen(self.initial, np.float64))
        object.__setattr__(self, "horizon", int(self.horizon))
        self._validate()

    def _validate(self) -> None:
        shape = self.transition.shape
        if self.transition.ndim != 3 or shape[0] != shape[2]:
            raise InvariantViolationError(f"transition 形状应为 (S, A, S)，实际 {shape}")
        n_states, n_actions, _ = shape
        if n_states < 1 or n_actions < 1:
            raise InvariantViolationError("状态数与动作数必须为正")
        if self.horizon < 1:
            raise InvariantViolationError(f"horizon 必须为正整数，实际 {self.horizon}")
        if self.initial.shape != (n_states,):
            raise InvariantViolationError(f"initial 长度应为 {n_states}")
        if (
            self.reward_values.ndim != 3
            or self.reward_values.shape[:2] != (n_states, n_actions)
            or self.reward_values.shape != self.reward_probs.shape
        ):
            raise InvariantViolationError("reward 数组形状应为 (S, A, K)")

        for s in range(n_states):
            for a in range(n_actions):
                _check_distribution(self.transition[s, a], f"transition[{s},{a}]")
                _check_distribution(self.reward_probs[s, a], f"reward[{s},{a}]")
                values = self.reward_values[s, a]
                if (
                    np.any(~np.isfinite(values))
                    or np.any(values < 0.0)
                    or np.any(values > 1.0)
                ):
                    raise InvariantViolationError(f"reward[{s},{a}] 支撑点不在[0,1]内")
        _check_distribution(self.initial, "initial")

        if self.assume_bounded_total_reward:
            certificate = validate_bounded_total_reward(self)
            if not certificate.ok:
                raise InvariantViolationError(
                    f"不满足总奖励有界假设，最坏总奖励 {certificate.total:.6g}"
                )

    @classmethod
    def from_reward_lists(
        cls,
        transition: npt.ArrayLike,
        rewards: Sequence[Sequence[Sequence[Tuple[float, float]]]],
        initial: npt.ArrayLike,
        horizon: int,
        assume_bounded_total_reward: bool = False,
    ) -> "FiniteMdp":
        """rewards[s][a] 为 (value, prob) 列表"""
        n_states, n_actions = np.shape(transition)[:2]
        sizes = [len(rewards[s][a]) for s in range(n_states) for a in range(n_actions)]
        width = max([1] + sizes)
        values = np.zeros((n_states, n_actions, width))
        probs = np.zeros((n_states, n_actions, width))
        for s in range(n_states):
            for a in range(n_actions):
                pairs = list(rewards[s][a])
                if not pairs:
                    pairs = [(0.0, 1.0)]
                for k, (value, prob) in enumerate(pairs):
                    values[s, a, k] = value
                    probs[s, a, k] = prob
        return cls(
            np.asarray(transition, dtype=np.float64),
            values,
            probs,
            np.asarray(initial, dtype=np.float64),
            horizon,
            assume_bounded_total_reward,
        )

    @classmethod
    def with_point_rewards(
        cls,
        transition: npt.ArrayLike,
        mean_reward: npt.ArrayLike,
        initial: npt.ArrayLike,
        horizon: int,
    ) -> "FiniteMdp":
        """奖励为确定值的MDP"""
        reward = np.asarray(mean_reward, dtype=np.float64)
        return cls(
            np.asarray(transition, dtype=np.float64),
            reward[:, :, None],
            np.ones(reward.shape + (1,)),
            np.asarray(initial, dtype=np.float64),
            horizon,
        )

    @property
    def n_states(self) -> int:
        return int(self.transition.shape[0])

    @property
    def n_actions(self) -> int:
        return int(self.transition.shape[1])

    @property
    def mean_reward(self) -> np.ndarray:
        return (self.reward_values * self.reward_probs).sum(axis=2)

    @property
    def reward_second_moment(self) -> np.ndarray:
        return (self.reward_values**2 * self.reward_probs).sum(axis=2)

    @property
    def max_reward(self) -> np.ndarray:
        """正概率支撑点中的最大奖励"""
        return np.where(self.reward_probs > 0, self.reward_values, 0.0).max(axis=2)

    def reward_distribution(self, s: int, a: int) -> List[Tuple[float, float]]:
        return [
            (float(v), float(p))
            for v, p in zip(self.reward_values[s, a], self.reward_probs[s, a])
            if p > 0
        ]

    def replace(self, **changes: Any) -> "FiniteMdp":
        return dataclasses.replace(self, **changes)

    def with_horizon(self, horizon: int) -> "FiniteMdp":
        return self.replace(horizon=horizon, assume_bounded_total_reward=False)


@dataclass(frozen=True, eq=False)
class MarkovChain:
    transition: np.ndarray
    initial: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "transition", _frozen(self.transition, np.float64))
        object.__setattr__(self, "initial", _frozen(self.initial, np.float64))
        n_states = self.initial.shape[0]
        if self.transition.shape != (n_states, n_states):
            raise InvariantViolationError(
                f"chain transition 形状应为 ({n_states}, {n_states})"
            )
        for s in range(n_states):
            _check_distribution(self.transition[s], f"chain transition[{s}]")
        _check_distribution(self.initial, "chain initial")

    @property
    def n_states(self) -> int:
        return int(self.initial.shape[0])


class Policy(object):
    """确定性策略

    actions 形状 (S,) 为平稳策略，形状 (H, S) 为非平稳策略。
    """

    __slots__ = ("actions",)

    def __init__(self, actions: npt.ArrayLike) -> None:
        table = _frozen(actions, np.int64)
        if table.ndim not in (1, 2):
            raise InvariantViolationError(f"策略数组维度应为1或2，实际 {table.ndim}")
        object.__setattr__(self, "actions", table)

    def __setattr__(self, name: str, value: Any) -> None:
        raise AttributeError("Policy 不可修改")

    @classmethod
    def stationary(cls, actions: Sequence[int]) -> "Policy":
        return cls(np.asarray(actions).reshape(-1))

    @classmethod
    def nonstationary(cls, table: npt.ArrayLike) -> "Policy":
        array = np.asarray(table)
        if array.ndim != 2:
            raise InvariantViolationError("非平稳策略需要 (H, S) 表")
        return cls(array)

    @property
    def is_stationary(self) -> bool:
        return self.actions.ndim == 1

    @property
    def n_states(self) -> int:
        return int(self.actions.shape[-1])

    def table(self, horizon: int) -> np.ndarray:
        """展开为 (H, S) 动作表"""
        if self.is_stationary:
            return np.broadcast_to(self.actions, (horizon, self.n_states))
        if self.actions.shape[0] != horizon:
            raise PolicyError(f"非平稳策略有 {self.actions.shape[0]} 步，需要 {horizon} 步")
        return self.actions

    def action(self, h: int, s: int) -> int:
        if self.is_stationary:
            return int(self.actions[s])
        return int(self.actions[h, s])

    def validate(
        self, n_states: int, n_actions: int, horizon: Optional[int] = None
    ) -> None:
        if self.n_states != n_states:
            raise InvariantViolationError(
                f"策略覆盖 {self.n_states} 个状态，需要 {n_states}"
            )
        if np.any(self.actions < 0) or np.any(self.actions >= n_actions):
            raise InvariantViolationError("策略包含非法动作编号")
        if (
            not self.is_stationary
            and horizon is not None
            and self.actions.shape[0] != horizon
        ):
            raise InvariantViolationError(f"非平稳策略必须恰好有 {horizon} 步")

    def key(self) -> Tuple:
        return (self.is_stationary,) + tuple(self.actions.reshape(-1).tolist())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Policy):
            return NotImplemented
        return self.actions.shape == other.actions.shape and self.key() == other.key()

    def __hash__(self) -> int:
        return hash((self.actions.shape, self.key()))

    def __repr__(self) -> str:
        kind = "Stationary" if self.is_stationary else "NonStationary"
        return f"{kind}({self.actions.tolist()})"


@dataclass(frozen=True, eq=False)
class Trajectory:
    """H 步轨迹：states 长度 H+1（含终止状态），actions 与 rewards 长度 H"""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "states", _frozen(self.states, np.int64))
        object.__setattr__(self, "actions", _frozen(self.actions, np.int64))
        object.__setattr__(self, "rewards", _frozen(self.rewards, np.float64))
        if (
            self.states.shape[0] != self.actions.shape[0] + 1
            or self.actions.shape != self.rewards.shape
        ):
            raise InvariantViolationError("轨迹长度不一致")
        if np.any(self.rewards < 0.0) or np.any(self.rewards > 1.0):
            raise InvariantViolationError("轨迹奖励不在[0,1]内")

    @property
    def length(self) -> int:
        return int(self.actions.shape[0])

    def validate(self, mdp: FiniteMdp) -> None:
        if self.length != mdp.horizon:
            raise InvariantViolationError(f"轨迹长度 {self.length} 不等于 H={mdp.horizon}")
        if np.any(self.states < 0) or np.any(self.states >= mdp.n_states):
            raise InvariantViolationError("轨迹包含非法状态")
        if np.any(self.actions < 0) or np.any(self.actions >= mdp.n_actions):
            raise InvariantViolationError("轨迹包含非法动作")

    def total_reward(self) -> float:
        return float(self.rewards.sum())


@dataclass(frozen=True, eq=False)
class TrajectoryDataset:
    """N 个列表，每个列表是 (s, a, r, s') 四元组序列，按列存为 (N, L) 数组"""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    n_states: int
    n_actions: int
    horizon: int
    seed: int = 0
    scale: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "states", _frozen(self.states, np.int16))
        object.__setattr__(self, "actions", _frozen(self.actions, np.int16))
        object.__setattr__(self, "rewards", _frozen(self.rewards, np.float64))
        object.__setattr__(self, "next_states", _frozen(self.next_states, np.int16))

        shape = self.states.shape
        columns = (self.actions, self.rewards, self.next_states)
        if len(shape) != 2 or any(x.shape != shape for x in columns):
            raise InvariantViolationError("数据集各列形状必须一致且为 (N, L)")
        expected = schedule_length(self.n_states, self.n_actions, self.horizon)
        if shape[1] != expected:
            raise InvariantViolationError(
                f"列表长度 {shape[1]} 不等于 |S||A|·|A|^(2|S|)·H = {expected}"
            )
        for name, column, bound in (
            ("s", self.states, self.n_states),
            ("a", self.actions, self.n_actions),
            ("s'", self.next_states, self.n_states),
        ):
            if column.size and (column.min() < 0 or column.max() >= bound):
                raise InvariantViolationError(f"数据集包含非法的 {name} 编号")
        if self.rewards.size and (self.rewards.min() < 0.0 or self.rewards.max() > 1.0):
            raise InvariantViolationError("数据集奖励不在[0,1]内")

    @property
    def n_lists(self) -> int:
        return int(self.states.shape[0])

    @property
    def list_length(self) -> int:
        return int(self.states.shape[1])

    def records(self, i: int) -> List[Tuple[int, int, float, int]]:
        return list(
            zip(
                self.states[i].tolist(),
                self.actions[i].tolist(),
                self.rewards[i].tolist(),
                self.next_states[i].tolist(),
            )
        )


@dataclass(frozen=True)
class RewardBoundCertificate:
    ok: bool
    total: float
    witness: Optional[Trajectory]


def validate_bounded_total_reward(mdp: FiniteMdp) -> RewardBoundCertificate:
    """检查总奖励有界假设

    沿任意正概率轨迹、任意策略，最大奖励支撑点之和不超过1。
    失败时返回取得最大值的轨迹作为反例。
    """
    n_states, horizon = mdp.n_states, mdp.horizon
    rmax = mdp.max_reward
    support = mdp.transition > 0

    upper = np.zeros(n_states)
    best_actions = np.zeros((horizon, n_states), dtype=np.int64)
    best_next = np.zeros((horizon, n_states, mdp.n_actions), dtype=np.int64)
    for h in reversed(range(horizon)):
        masked = np.where(support, upper[None, None, :], -np.inf)
        best_next[h] = np.argmax(masked, axis=2)
        q_values = rmax + masked.max(axis=2)
        best_actions[h] = greedy_actions(q_values)
        upper = q_values[np.arange(n_states), best_actions[h]]

    starts = np.flatnonzero(mdp.initial > 0)
    s0 = int(starts[np.argmax(upper[starts])])
    total = float(upper[s0])
    if total <= 1.0 + PROB_TOL:
        return RewardBoundCertificate(True, total, None)

    states = [s0]
    actions = []
    rewards = []
    for h in range(horizon):
        s = states[-1]
        a = int(best_actions[h, s])
        actions.append(a)
        rewards.append(float(rmax[s, a]))
        states.append(int(best_next[h, s, a]))
    return RewardBoundCertificate(False, total, Trajectory(states, actions, rewards))


def induce_chain(mdp: FiniteMdp, policy: Policy) -> MarkovChain:
    if not policy.is_stationary:
        raise PolicyError("induce_chain 只接受平稳策略")
    policy.validate(mdp.n_states, mdp.n_actions)
    rows = mdp.transition[np.arange(mdp.n_states), policy.actions]
    return MarkovChain(rows, mdp.initial)


def count_stationary_policies(n_states: int, n_actions: int) -> int:
    return n_actions**n_states


def enumerate_stationary_policies(
    mdp: FiniteMdp, cap: Optional[int] = None
) -> List[Policy]:
    """按字典序（先状态后动作编号）列出全部 |A|^|S| 个平稳策略"""
    if cap is None:
        cap = SETTINGS["oracle.policy_cap"]
    required = count_stationary_policies(mdp.n_states, mdp.n_actions)
    if required > cap:
        raise CapExceededError(required, cap, "平稳策略枚举")
    return [
        Policy.stationary(actions)
        for actions in itertools.product(range(mdp.n_actions), repeat=mdp.n_states)
    ]


def nonstationary_policy_tables(
    n_states: int, n_actions: int, horizon: int, cap: Optional[int] = None
) -> np.ndarray:
    """全部非平稳策略的动作表，形状 (A^(S·H), H, S)，字典序与平稳枚举一致"""
    if cap is None:
        cap = SETTINGS["oracle.policy_cap"]
    positions = n_states * horizon
    required = n_actions**positions
    if required > cap:
        raise CapExceededError(required, cap, "非平稳策略枚举")
    index = np.arange(required, dtype=np.int64)
    weights = n_actions ** np.arange(positions - 1, -1, -1, dtype=np.int64)
    digits = (index[:, None] // weights[None, :]) % n_actions
    return digits.reshape(required, horizon, n_states)


def enumerate_nonstationary_policies(
    mdp: FiniteMdp, cap: Optional[int] = None
) -> List[Policy]:
    tables = nonstationary_policy_tables(mdp.n_states, mdp.n_actions, mdp.horizon, cap)
    return [Policy.nonstationary(table) for table in tables]
