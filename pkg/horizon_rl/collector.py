"""
采样调度与访问次数分位数估计

一个列表依次包含：按行优先遍历 (s, a)，再按字典序遍历平稳策略对 (pi1, pi2)，
每个组合运行一个切换回合。同一组合（cell）下的 N 个列表共用一个随机子流并向量化运行，
cell 编号固定，因此结果与逐个生成一致。
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Any, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from horizon_rl.errors import (
    BudgetExceededError,
    DimensionMismatchError,
    InvariantViolationError,
)
from horizon_rl.log import LoggerMixin
from horizon_rl.mdp_core import (
    FiniteMdp,
    Policy,
    TrajectoryDataset,
    episodes_per_list,
    schedule_length,
)
from horizon_rl.sim_env import EpisodeBatch, EpisodicEnv, RngStream
from horizon_rl.settings import SETTINGS


@dataclass(frozen=True, eq=False)
class QuantileTable:
    """(s, a) -> m̄^st(s, a)，以及产生它所用的 eps_est、delta 与列表数 N"""

    values: np.ndarray
    epsilon: float
    delta: float
    n_lists: int
    horizon: int

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.int64)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if values.ndim != 2:
            raise InvariantViolationError("分位数表形状应为 (S, A)")
        limit = schedule_length(values.shape[0], values.shape[1], self.horizon)
        if np.any(values < 0) or np.any(values > limit):
            raise InvariantViolationError(f"分位数必须在 [0, {limit}] 内")

    @classmethod
    def unbounded(cls, n_states: int, n_actions: int, horizon: int) -> "QuantileTable":
        """不做截断：每个 (s, a) 取列表长度"""
        limit = schedule_length(n_states, n_actions, horizon)
        return cls(np.full((n_states, n_actions), limit), 1.0, 1.0, 0, horizon)

    @property
    def n_states(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_actions(self) -> int:
        return int(self.values.shape[1])

    def __getitem__(self, pair: Tuple[int, int]) -> int:
        return int(self.values[pair])


@dataclass(frozen=True)
class ScheduleCell:
    index: int
    target: Tuple[int, int]
    first: Policy
    second: Policy


def iter_schedule(n_states: int, n_actions: int) -> Iterator[ScheduleCell]:
    """固定的调度顺序：(s, a) 行优先，(pi1, pi2) 字典序"""
    policies = [
        Policy.stationary(actions)
        for actions in itertools.product(range(n_actions), repeat=n_states)
    ]
    index = 0
    for s in range(n_states):
        for a in range(n_actions):
            for first, second in itertools.product(policies, repeat=2):
                yield ScheduleCell(index, (s, a), first, second)
                index += 1


class SwitchingController(object):
    """在 (s, a) 首次出现后的下一步起由 pi1 切换到 pi2

    出现 (s, a) 的那一步本身仍使用 pi1。
    """

    def __init__(self, target: Tuple[int, int], first: Policy, second: Policy) -> None:
        self.target = target
        self.first = np.asarray(first.actions)
        self.second = np.asarray(second.actions)
        self.switched = np.zeros(0, dtype=bool)

    def start(self, n: int) -> None:
        self.switched = np.zeros(n, dtype=bool)

    def act(self, h: int, states: np.ndarray) -> np.ndarray:
        return np.where(self.switched, self.second[states], self.first[states])

    def observe(self, h: int, states: np.ndarray, actions: np.ndarray) -> None:
        s, a = self.target
        self.switched |= (states == s) & (actions == a)


def switched_rollout(
    env: EpisodicEnv,
    target: Tuple[int, int],
    first: Policy,
    second: Policy,
    rng: RngStream,
) -> List[Tuple[int, int, float, int]]:
    """单个切换回合，返回 (s, a, r, s') 序列"""
    if not (first.is_stationary and second.is_stationary):
        raise InvariantViolationError("切换回合需要两个平稳策略")
    batch = env.run_episodes(1, SwitchingController(target, first, second), rng)
    return _batch_records(batch, 0)


def _batch_records(batch: EpisodeBatch, i: int) -> List[Tuple[int, int, float, int]]:
    return list(
        zip(
            batch.states[i, :-1].tolist(),
            batch.actions[i].tolist(),
            batch.rewards[i].tolist(),
            batch.states[i, 1:].tolist(),
        )
    )


def count_occurrences(records: Iterable[Sequence[Any]], s: int, a: int) -> int:
    """列表中 (s, a) 出现的次数"""
    return sum(1 for record in records if record[0] == s and record[1] == a)


def dataset_counts(dataset: TrajectoryDataset) -> np.ndarray:
    """每个列表中各 (s, a) 的出现次数，形状 (N, S, A)"""
    pair = dataset.states.astype(np.int64) * dataset.n_actions + dataset.actions
    n_pairs = dataset.n_states * dataset.n_actions
    counts = np.stack([(pair == k).sum(axis=1) for k in range(n_pairs)], axis=1)
    return counts.reshape(dataset.n_lists, dataset.n_states, dataset.n_actions)


def quantile_rank(n_lists: int, epsilon: float) -> int:
    """第 ceil(N·eps/2) 大，限制在 [1, N]"""
    return min(max(int(math.ceil(n_lists * epsilon / 2.0)), 1), n_lists)


def quantiles_from_counts(
    counts: np.ndarray, epsilon: float, delta: float, horizon: int
) -> QuantileTable:
    """由 (N, S, A) 计数按 ceil(N·eps/2) 位次取值"""
    n_lists = counts.shape[0]
    rank = quantile_rank(n_lists, epsilon)
    ordered = -np.sort(-counts, axis=0)
    return QuantileTable(ordered[rank - 1], epsilon, delta, n_lists, horizon)


class SampleCollector(LoggerMixin):
    """运行采样调度，按 cell 写入数据集或累加访问次数"""

    def __init__(self, env: EpisodicEnv) -> None:
        self.env = env
        self._init_logger()

    @property
    def mdp(self) -> FiniteMdp:
        return self.env.mdp

    def episodes_required(self, n_lists: int) -> int:
        return n_lists * episodes_per_list(self.mdp.n_states, self.mdp.n_actions)

    def _run_cells(
        self, n_lists: int, rng: RngStream
    ) -> Iterator[Tuple[ScheduleCell, EpisodeBatch]]:
        required = self.env.episodes + self.episodes_required(n_lists)
        if required > self.env.budget:
            message = f"采样调度需要 {required} 个回合，超过预算 {self.env.budget}"
            self._log(logging.WARNING, message)
            raise BudgetExceededError(required, self.env.budget, "episodes")

        for cell in iter_schedule(self.mdp.n_states, self.mdp.n_actions):
            controller = SwitchingController(cell.target, cell.first, cell.second)
            stream = rng.substream(cell.index)
            yield cell, self.env.run_episodes(n_lists, controller, stream)

    def collect_samples(
        self, n_lists: int, rng: RngStream, scale: float = 1.0
    ) -> TrajectoryDataset:
        """生成 N 个列表，每个长度 |S||A|·|A|^(2|S|)·H"""
        if n_lists < 1:
            raise InvariantViolationError("列表数 N 必须为正")
        mdp = self.mdp
        horizon = mdp.horizon
        width = schedule_length(mdp.n_states, mdp.n_actions, horizon)
        states = np.zeros((n_lists, width), dtype=np.int16)
        actions = np.zeros((n_lists, width), dtype=np.int16)
        rewards = np.zeros((n_lists, width))
        next_states = np.zeros((n_lists, width), dtype=np.int16)

        per_list = width // horizon
        self._log(logging.INFO, f"开始采样: N={n_lists}，每个列表 {per_list} 个回合")
        for cell, batch in self._run_cells(n_lists, rng):
            window = slice(cell.index * horizon, (cell.index + 1) * horizon)
            states[:, window] = batch.states[:, :-1]
            actions[:, window] = batch.actions
            rewards[:, window] = batch.rewards
            next_states[:, window] = batch.states[:, 1:]
        self._log(logging.INFO, f"采样完成，累计回合 {self.env.episodes}")
        return TrajectoryDataset(
            states,
            actions,
            rewards,
            next_states,
            mdp.n_states,
            mdp.n_actions,
            horizon,
            seed=rng.seed,
            scale=scale,
        )

    def schedule_counts(self, n_lists: int, rng: RngStream) -> np.ndarray:
        """只统计访问次数，不保存元组，返回 (N, S, A)"""
        mdp = self.mdp
        counts = np.zeros((n_lists, mdp.n_states, mdp.n_actions), dtype=np.int64)
        rows = np.repeat(np.arange(n_lists), mdp.horizon)
        for _, batch in self._run_cells(n_lists, rng):
            index = (rows, batch.states[:, :-1].ravel(), batch.actions.ravel())
            np.add.at(counts, index, 1)
        return counts

    def estimate_quantiles(
        self,
        epsilon: float,
        delta: float,
        rng: RngStream,
        scale: float = 1.0,
        n_lists: Optional[int] = None,
    ) -> QuantileTable:
        """按同样的调度运行 N 个列表，取各 (s, a) 计数的第 ceil(N·eps/2) 大

        n_lists 缺省为 ceil(scale·300·log(6|S||A|/delta)/eps)。
        """
        if not (0.0 < epsilon <= 1.0 and 0.0 < delta <= 1.0):
            raise InvariantViolationError("eps_est 与 delta_est 必须在 (0,1] 内")
        if scale <= 0:
            raise InvariantViolationError("scale 必须为正")
        if n_lists is None:
            n_lists = estimation_lists(
                self.mdp.n_states, self.mdp.n_actions, epsilon, delta, scale
            )
        self._log(logging.INFO, f"估计分位数: eps_est={epsilon:.4g}，N={n_lists}")
        counts = self.schedule_counts(n_lists, rng)
        return quantiles_from_counts(counts, epsilon, delta, self.mdp.horizon)


def estimation_lists(
    n_states: int, n_actions: int, epsilon: float, delta: float, scale: float = 1.0
) -> int:
    log_term = math.log(6.0 * n_states * n_actions / delta)
    n_lists = math.ceil(scale * 300.0 * log_term / epsilon)
    return max(int(n_lists), 1)


def collect_samples(
    env: EpisodicEnv, n_lists: int, rng: RngStream, scale: float = 1.0
) -> TrajectoryDataset:
    return SampleCollector(env).collect_samples(n_lists, rng, scale)


def estimate_quantiles(
    env: EpisodicEnv, epsilon: float, delta: float, scale: float, rng: RngStream
) -> QuantileTable:
    return SampleCollector(env).estimate_quantiles(epsilon, delta, rng, scale)


def check_dims(dataset: TrajectoryDataset, table: QuantileTable) -> None:
    found = (dataset.n_states, dataset.n_actions, dataset.horizon)
    expected = (table.n_states, table.n_actions, table.horizon)
    if found != expected:
        raise DimensionMismatchError(f"数据集维度 {found} 与分位数表 {expected} 不一致")


# ---------------------------------------------------------------------------
# 调度访问次数分布的蒙特卡洛神谕


@dataclass(frozen=True, eq=False)
class ScheduleQuantiles:
    """蒙特卡洛估计的 Q^st_eps，stderr 为分位点处尾部频率的标准误"""

    values: np.ndarray
    epsilon: float
    n_samples: int
    stderr: float


def monte_carlo_quantiles(counts: np.ndarray, epsilon: float) -> ScheduleQuantiles:
    """最大的 x 使经验频率 Pr[count >= x] >= eps，即第 ceil(n·eps) 大"""
    n_samples = counts.shape[0]
    rank = min(max(int(math.ceil(n_samples * epsilon - 1e-9)), 1), n_samples)
    ordered = -np.sort(-counts, axis=0)
    stderr = math.sqrt(epsilon * (1.0 - epsilon) / n_samples)
    return ScheduleQuantiles(ordered[rank - 1], epsilon, n_samples, stderr)


def simulate_schedule_counts(
    mdp: FiniteMdp, rng: RngStream, n_samples: Optional[int] = None
) -> np.ndarray:
    """独立模拟整个调度 n 次，返回 (n, S, A) 访问次数，不计入任何预算"""
    if n_samples is None:
        n_samples = SETTINGS["sim.schedule_samples"]
    collector = SampleCollector(EpisodicEnv(mdp, budget=math.inf))
    return collector.schedule_counts(n_samples, rng)
