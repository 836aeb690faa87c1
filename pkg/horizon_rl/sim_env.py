"""
带种子的MDP模拟：回合式交互与生成模型查询

所有随机数来自 Philox 计数器生成器，(seed, stream) 相同则抽样序列逐位相同。
离散分布按支撑点存储顺序做逆CDF抽样。
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Optional, Protocol, Tuple, Union

import numpy as np
import numpy.typing as npt

from horizon_rl.errors import BudgetExceededError, EpisodeError
from horizon_rl.log import LoggerMixin
from horizon_rl.mdp_core import FiniteMdp, Policy, Trajectory
from horizon_rl.settings import SETTINGS

StreamKey = Union[int, Tuple[int, ...]]


class RngStream(object):
    """可分裂的随机数流

    stream 为整数元组，substream 在末尾追加下标得到独立子流。
    """

    def __init__(self, seed: int, stream: StreamKey = ()) -> None:
        if isinstance(stream, int):
            stream = (stream,)
        self.seed = int(seed)
        self.stream = tuple(int(i) for i in stream)
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        self._generator = np.random.Generator(np.random.Philox(sequence))
        self.draws = 0

    def substream(self, *index: int) -> "RngStream":
        return RngStream(self.seed, self.stream + tuple(int(i) for i in index))

    def uniform(self, size: Optional[npt.ArrayLike] = None) -> Any:
        """[0,1) 上的均匀数，size 为 None 时返回标量"""
        self.draws += 1 if size is None else int(np.prod(size))
        return self._generator.random(size)

    @property
    def generator(self) -> np.random.Generator:
        """底层生成器，供实例生成器等需要其他分布的地方使用"""
        return self._generator

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream={self.stream})"


def cdf_table(probs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """按最后一维累加得到CDF，同时返回每行最后一个正概率的位置"""
    probs = np.asarray(probs, dtype=np.float64)
    cdf = np.cumsum(probs, axis=-1)
    width = probs.shape[-1]
    last = width - 1 - np.argmax(probs[..., ::-1] > 0, axis=-1)
    return cdf, last


def inverse_cdf(cdf: np.ndarray, last: np.ndarray, u: np.ndarray) -> np.ndarray:
    """逆CDF抽样，cdf 与 u 的前导维度一致"""
    u = np.asarray(u)
    index = (cdf <= u[..., None]).sum(axis=-1)
    return np.minimum(index, last)


@dataclass(frozen=True, eq=False)
class EpisodeBatch:
    """n 个完整回合，states (n, H+1)，actions 与 rewards (n, H)"""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    @property
    def n_episodes(self) -> int:
        return int(self.actions.shape[0])

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(self.states[i], self.actions[i], self.rewards[i])

    def total_rewards(self) -> np.ndarray:
        return self.rewards.sum(axis=1)


class EpisodeController(Protocol):
    def start(self, n: int) -> None:
        ...

    def act(self, h: int, states: np.ndarray) -> np.ndarray:
        ...

    def observe(self, h: int, states: np.ndarray, actions: np.ndarray) -> None:
        ...


class PolicyController(object):
    """按确定性策略给出动作的控制器，可同时驱动一批回合"""

    def __init__(self, policy: Policy, horizon: int) -> None:
        self.table = np.asarray(policy.table(horizon))

    def start(self, n: int) -> None:
        pass

    def act(self, h: int, states: np.ndarray) -> np.ndarray:
        return self.table[h, states]

    def observe(self, h: int, states: np.ndarray, actions: np.ndarray) -> None:
        pass


class _Sampler(object):
    """预先计算好各分布的CDF"""

    def __init__(self, mdp: FiniteMdp) -> None:
        self.mdp = mdp
        self._trans_cdf, self._trans_last = cdf_table(mdp.transition)
        self._reward_cdf, self._reward_last = cdf_table(mdp.reward_probs)
        self._init_cdf, self._init_last = cdf_table(mdp.initial)

    def _initial(self, u: np.ndarray) -> np.ndarray:
        cdf = np.broadcast_to(self._init_cdf, u.shape + self._init_cdf.shape)
        last = np.broadcast_to(self._init_last, u.shape)
        return inverse_cdf(cdf, last, u)

    def _step(
        self, states: np.ndarray, actions: np.ndarray, u: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray]:
        """u 形状 (n, 2)，第0列抽奖励，第1列抽下一状态"""
        k = inverse_cdf(
            self._reward_cdf[states, actions],
            self._reward_last[states, actions],
            u[:, 0],
        )
        rewards = self.mdp.reward_values[states, actions, k]
        next_states = inverse_cdf(
            self._trans_cdf[states, actions],
            self._trans_last[states, actions],
            u[:, 1],
        )
        return rewards, next_states


class EpisodicEnv(LoggerMixin, _Sampler):
    """回合式访问：每个回合从 mu 抽初始状态并恰好运行 H 步

    episodes 记录已消耗的回合数，超过预算时抛出 BudgetExceededError。
    """

    def __init__(self, mdp: FiniteMdp, budget: Optional[float] = None) -> None:
        _Sampler.__init__(self, mdp)
        self._init_logger()
        self.budget = SETTINGS["budget.episodes"] if budget is None else budget
        self.episodes = 0

    @property
    def horizon(self) -> int:
        return self.mdp.horizon

    def charge(self, n: int) -> None:
        required = self.episodes + n
        if required > self.budget:
            self._log(logging.WARNING, f"回合预算不足: 需要 {required}，预算 {self.budget}")
            raise BudgetExceededError(required, self.budget, "episodes")
        self.episodes = required

    def run_episodes(
        self, n: int, controller: EpisodeController, rng: RngStream
    ) -> EpisodeBatch:
        """同时运行 n 个回合，controller 提供 start/act/observe"""
        self.charge(n)
        horizon = self.horizon
        states = np.zeros((n, horizon + 1), dtype=np.int64)
        actions = np.zeros((n, horizon), dtype=np.int64)
        rewards = np.zeros((n, horizon))

        states[:, 0] = self._initial(rng.uniform(n))
        controller.start(n)
        for h in range(horizon):
            current = states[:, h]
            chosen = controller.act(h, current)
            u = rng.uniform((n, 2))
            rewards[:, h], states[:, h + 1] = self._step(current, chosen, u)
            controller.observe(h, current, chosen)
            actions[:, h] = chosen
        return EpisodeBatch(states, actions, rewards)

    def rollout(self, policy: Policy, rng: RngStream) -> Trajectory:
        policy.validate(self.mdp.n_states, self.mdp.n_actions, self.horizon)
        controller = PolicyController(policy, self.horizon)
        return self.run_episodes(1, controller, rng).trajectory(0)

    def rollout_batch(self, policy: Policy, n: int, rng: RngStream) -> EpisodeBatch:
        policy.validate(self.mdp.n_states, self.mdp.n_actions, self.horizon)
        return self.run_episodes(n, PolicyController(policy, self.horizon), rng)

    def session(self, rng: RngStream) -> "EpisodicSession":
        return EpisodicSession(self, rng)


class EpisodicSession(object):
    """单个回合的逐步交互，不可跨线程共享

    reset 时计入一个回合，中途放弃的回合同样计数。
    与 run_episodes(1, ...) 消耗随机数的顺序一致。
    """

    def __init__(self, env: EpisodicEnv, rng: RngStream) -> None:
        self.env = env
        self.rng = rng
        self.state: Optional[int] = None
        self.h: Optional[int] = None

    def reset(self) -> int:
        if self.h is not None and self.h < self.env.horizon:
            raise EpisodeError(f"回合进行到第 {self.h} 步，必须先完成 H={self.env.horizon} 步")
        self.env.charge(1)
        self.state = int(self.env._initial(np.asarray([self.rng.uniform()]))[0])
        self.h = 0
        return self.state

    def step(self, action: int) -> Tuple[float, int]:
        if self.h is None:
            raise EpisodeError("需要先调用 reset")
        if self.h >= self.env.horizon:
            raise EpisodeError("回合已结束")
        rewards, next_states = self.env._step(
            np.asarray([self.state]), np.asarray([action]), self.rng.uniform((1, 2))
        )
        self.state = int(next_states[0])
        self.h += 1
        return float(rewards[0]), self.state


class GenerativeSampler(LoggerMixin, _Sampler):
    """生成模型访问：任意 (s, a) 独立抽样

    每次查询（包括从 mu 抽样）计数一次，H 次查询记为一批。
    """

    def __init__(self, mdp: FiniteMdp, budget: Optional[float] = None) -> None:
        _Sampler.__init__(self, mdp)
        self._init_logger()
        self.budget = SETTINGS["budget.queries"] if budget is None else budget
        self.queries = 0

    @property
    def batches(self) -> float:
        return self.queries / self.mdp.horizon

    @property
    def full_batches(self) -> int:
        return int(math.ceil(self.queries / self.mdp.horizon))

    def charge(self, n: int) -> None:
        required = self.queries + n
        if required > self.budget:
            self._log(logging.WARNING, f"查询预算不足: 需要 {required}，预算 {self.budget}")
            raise BudgetExceededError(required, self.budget, "queries")
        self.queries = required

    def query(self, s: int, a: int, rng: RngStream) -> Tuple[float, int]:
        rewards, next_states = self.query_batch(s, a, 1, rng)
        return float(rewards[0]), int(next_states[0])

    def query_batch(
        self, s: int, a: int, n: int, rng: RngStream
    ) -> Tuple[np.ndarray, np.ndarray]:
        self.charge(n)
        states = np.full(n, s, dtype=np.int64)
        actions = np.full(n, a, dtype=np.int64)
        return self._step(states, actions, rng.uniform((n, 2)))

    def sample_initial(self, n: int, rng: RngStream) -> np.ndarray:
        self.charge(n)
        return self._initial(rng.uniform(n))


def generative_query(
    sampler: GenerativeSampler, s: int, a: int, rng: RngStream
) -> Tuple[float, int]:
    return sampler.query(s, a, rng)


def rollout(
    mdp: FiniteMdp,
    policy: Policy,
    rng: RngStream,
    env: Optional[EpisodicEnv] = None,
) -> Trajectory:
    """单回合执行策略，传入 env 时计入它的回合计数"""
    if env is None:
        env = EpisodicEnv(mdp, budget=math.inf)
    return env.rollout(policy, rng)
