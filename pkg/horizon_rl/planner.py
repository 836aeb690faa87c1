"""
区间模型集合上的悲观规划，以及两条端到端学习流程

集合按 (s, a) 行独立（矩形），逆向归纳中每一步的内层最小化是
带盒约束与总和约束的线性规划，按下一步价值从小到大贪心分配质量即可精确求解。
对手允许随时间变化，所以得到的值不高于对时不变模型取最小的值。
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import numpy.typing as npt

from horizon_rl.collector import (
    QuantileTable,
    SampleCollector,
    dataset_counts,
    quantiles_from_counts,
)
from horizon_rl.empirical_model import (
    EstimatedModel,
    IntervalModelSet,
    build_generative_model,
    build_truncated_model,
    confidence_widths,
    contains,
)
from horizon_rl.errors import (
    BudgetExceededError,
    CapExceededError,
    ConfigError,
    InvariantViolationError,
)
from horizon_rl.exact_oracle import backward_induction, evaluate_table
from horizon_rl.log import LoggerMixin
from horizon_rl.mdp_core import (
    FiniteMdp,
    Policy,
    TrajectoryDataset,
    episodes_per_list,
    greedy_actions,
)
from horizon_rl.settings import SETTINGS
from horizon_rl.sim_env import EpisodicEnv, GenerativeSampler, RngStream

PRESETS = ("desk", "theory")


# ---------------------------------------------------------------------------
# 内层线性规划


def interval_bounds(
    center: np.ndarray, widths: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """区间与 [0,1] 求交"""
    return np.clip(center - widths, 0.0, 1.0), np.clip(center + widths, 0.0, 1.0)


def fill_rows(lo: np.ndarray, hi: np.ndarray, values: np.ndarray) -> np.ndarray:
    """min q·values，s.t. lo <= q <= hi，sum q = 1

    先取下界，剩余质量按 values 升序（同值按状态编号）依次填满。
    lo/hi 可以带任意前导维度，values 形状 (S,)。
    """
    order = np.argsort(values, kind="stable")
    lo_sorted = lo[..., order]
    room = hi[..., order] - lo_sorted
    remaining = np.maximum(1.0 - lo.sum(axis=-1, keepdims=True), 0.0)
    before = np.cumsum(room, axis=-1) - room
    alloc = np.clip(remaining - before, 0.0, room)
    q = np.empty_like(lo_sorted)
    q[..., order] = lo_sorted + alloc
    return q


def _row_bounds(
    center: npt.ArrayLike, widths: npt.ArrayLike
) -> Tuple[np.ndarray, np.ndarray]:
    return interval_bounds(
        np.asarray(center, dtype=np.float64), np.asarray(widths, dtype=np.float64)
    )


def worst_case_row(
    center: npt.ArrayLike, widths: npt.ArrayLike, next_values: npt.ArrayLike
) -> np.ndarray:
    """区间内使期望下一步价值最小的分布

    全零中心配合宽度1即整个单纯形，结果是 argmin 状态上的点质量。
    """
    lo, hi = _row_bounds(center, widths)
    return fill_rows(lo, hi, np.asarray(next_values, dtype=np.float64))


def best_case_row(
    center: npt.ArrayLike, widths: npt.ArrayLike, next_values: npt.ArrayLike
) -> np.ndarray:
    lo, hi = _row_bounds(center, widths)
    return fill_rows(lo, hi, -np.asarray(next_values, dtype=np.float64))


def row_vertices(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """{lo <= q <= hi, sum q = 1} 的全部顶点

    顶点至多有一个分量严格位于上下界之间，逐个枚举。
    """
    n = lo.shape[0]
    found: List[np.ndarray] = []
    for free in range(n):
        others = [i for i in range(n) if i != free]
        for choice in itertools.product((0, 1), repeat=len(others)):
            q = np.zeros(n)
            for i, bit in zip(others, choice):
                q[i] = hi[i] if bit else lo[i]
            q[free] = 1.0 - q[others].sum()
            if lo[free] - 1e-12 <= q[free] <= hi[free] + 1e-12:
                q[free] = min(max(q[free], lo[free]), hi[free])
                found.append(q)
    if not found:
        raise InvariantViolationError("区间与单纯形不相交")
    return np.unique(np.round(np.array(found), 15), axis=0)


# ---------------------------------------------------------------------------
# 鲁棒逆向归纳


@dataclass(frozen=True, eq=False)
class RobustValueTable:
    """逐步的鲁棒价值 (H+1, S) 与对应动作 (H, S)，value 为初始分布取最坏后的值"""

    values: np.ndarray
    actions: np.ndarray
    value: float

    @property
    def policy(self) -> Policy:
        return Policy.nonstationary(self.actions)


def _reward(model_set: IntervalModelSet, reward: Optional[np.ndarray]) -> np.ndarray:
    if reward is None:
        return model_set.center.reward
    reward = np.asarray(reward, dtype=np.float64)
    if reward.shape != model_set.center.reward.shape:
        raise InvariantViolationError("奖励数组形状与集合不一致")
    return reward


def _robust_dp(
    model_set: IntervalModelSet,
    horizon: Optional[int],
    reward: Optional[np.ndarray],
    sign: float,
    table: Optional[np.ndarray] = None,
) -> RobustValueTable:
    """sign=+1 为悲观（对手取最小），-1 为乐观；table 为 None 时逐步取最优动作"""
    center = model_set.center
    horizon = center.horizon if horizon is None else int(horizon)
    rewards = _reward(model_set, reward)
    lo, hi = interval_bounds(center.transition, model_set.transition_width)
    n_states = center.n_states
    index = np.arange(n_states)

    values = np.zeros((horizon + 1, n_states))
    actions = np.zeros((horizon, n_states), dtype=np.int64)
    for h in reversed(range(horizon)):
        q = fill_rows(lo, hi, sign * values[h + 1])
        q_values = rewards + q @ values[h + 1]
        actions[h] = greedy_actions(q_values) if table is None else table[h]
        values[h] = q_values[index, actions[h]]

    mu_lo, mu_hi = interval_bounds(center.initial, model_set.initial_width)
    mu = fill_rows(mu_lo, mu_hi, sign * values[0])
    return RobustValueTable(values, actions, float(mu @ values[0]))


def _policy_table(
    policy: Policy, model_set: IntervalModelSet, horizon: Optional[int]
) -> np.ndarray:
    horizon = model_set.horizon if horizon is None else int(horizon)
    policy.validate(model_set.n_states, model_set.n_actions, horizon)
    return np.asarray(policy.table(horizon))


def pessimistic_value_table(
    policy: Policy,
    model_set: IntervalModelSet,
    horizon: Optional[int] = None,
    reward: Optional[np.ndarray] = None,
) -> RobustValueTable:
    table = _policy_table(policy, model_set, horizon)
    return _robust_dp(model_set, table.shape[0], reward, 1.0, table)


def pessimistic_policy_value(
    policy: Policy,
    model_set: IntervalModelSet,
    horizon: Optional[int] = None,
    reward: Optional[np.ndarray] = None,
) -> float:
    """给定策略在集合上的悲观价值（时变对手松弛，不高于对时不变模型取最小）"""
    return pessimistic_value_table(policy, model_set, horizon, reward).value


def pessimistic_plan(
    model_set: IntervalModelSet,
    horizon: Optional[int] = None,
    reward: Optional[np.ndarray] = None,
) -> Tuple[Policy, float]:
    result = _robust_dp(model_set, horizon, reward, 1.0)
    return result.policy, result.value


def optimistic_policy_value(
    policy: Policy,
    model_set: IntervalModelSet,
    horizon: Optional[int] = None,
    reward: Optional[np.ndarray] = None,
) -> float:
    table = _policy_table(policy, model_set, horizon)
    return _robust_dp(model_set, table.shape[0], reward, -1.0, table).value


def optimistic_plan(
    model_set: IntervalModelSet,
    horizon: Optional[int] = None,
    reward: Optional[np.ndarray] = None,
) -> Tuple[Policy, float]:
    result = _robust_dp(model_set, horizon, reward, -1.0)
    return result.policy, result.value


def plan_empirical(
    model: EstimatedModel, horizon: Optional[int] = None
) -> Tuple[Policy, float]:
    """在估计模型上做普通逆向归纳"""
    if model.provenance == "truncated-episodic":
        raise InvariantViolationError("截断估计模型应通过区间集合做悲观规划")
    horizon = model.horizon if horizon is None else int(horizon)
    table, values = backward_induction(model.transition, model.reward, horizon)
    return Policy.nonstationary(table), float(model.initial @ values[0])


def corner_model_value(
    policy: Policy,
    model_set: IntervalModelSet,
    horizon: Optional[int] = None,
    cap: Optional[int] = None,
) -> float:
    """枚举时不变的顶点模型，返回策略价值的最小值

    只枚举策略用到的 (s, a) 行，未用到的行不影响价值。
    """
    if cap is None:
        cap = SETTINGS["oracle.policy_cap"]
    table = _policy_table(policy, model_set, horizon)
    center = model_set.center
    lo, hi = interval_bounds(center.transition, model_set.transition_width)
    used = sorted({(s, int(a)) for row in table for s, a in enumerate(row)})
    row_choices = [row_vertices(lo[s, a], hi[s, a]) for s, a in used]
    mu_lo, mu_hi = interval_bounds(center.initial, model_set.initial_width)
    mu_choices = row_vertices(mu_lo, mu_hi)

    required = len(mu_choices) * int(np.prod([len(c) for c in row_choices]))
    if required > cap:
        raise CapExceededError(required, cap, "顶点模型枚举")

    transition = np.array(center.transition)
    best = math.inf
    for rows in itertools.product(*row_choices):
        for (s, a), row in zip(used, rows):
            transition[s, a] = row
        values = evaluate_table(transition, center.reward, table)
        best = min(best, float((mu_choices @ values[0]).min()))
    return best


# ---------------------------------------------------------------------------
# 参数


def _log10(x: float) -> float:
    return math.log10(x)


@dataclass(frozen=True)
class TheoreticalCounts:
    """理论常数的 log10，避免溢出"""

    log10_n_collect: float
    log10_epsilon_est: float
    log10_n_est: float
    log10_n_generative: float


def theoretical_parameters(
    n_states: int, n_actions: int, horizon: int, epsilon: float, delta: float
) -> TheoreticalCounts:
    s, a = n_states, n_actions
    log10_eps_est = (
        _log10(epsilon)
        - _log10(32768.0)
        - _log10(s * a)
        - 12 * (s + 1) * _log10(s + 1)
    )
    log10_collect = (
        66 * _log10(2.0)
        + 24 * (s + 1) * _log10(s + 1)
        + _log10(math.log(18.0 * s * s * a / delta))
        + 7 * _log10(s)
        + 5 * _log10(a)
        - 5 * _log10(epsilon)
    )
    log10_est = _log10(300.0 * math.log(6.0 * s * a / delta)) - log10_eps_est
    log10_gen = (
        29 * _log10(2.0)
        + 5 * _log10(s)
        + 3 * _log10(a)
        + _log10(horizon)
        - 3 * _log10(epsilon)
    )
    return TheoreticalCounts(log10_collect, log10_eps_est, log10_est, log10_gen)


def scaled_count(log10_n: float, scale: float) -> float:
    """ceil(scale·10^log10_n)，至少为1；过大时返回 inf"""
    exponent = log10_n + math.log10(scale)
    if exponent > 300:
        return math.inf
    return float(max(math.ceil(10.0**exponent), 1))


@dataclass(frozen=True)
class PipelineParameters:
    preset: str
    epsilon: float
    delta: float
    scale: float
    epsilon_est: float
    n_est: float
    n_collect: float
    n_generative: float
    theory: TheoreticalCounts


def _check_common(epsilon: float, delta: float, scale: float, preset: str) -> None:
    if not (0.0 < epsilon <= 1.0 and 0.0 < delta <= 1.0):
        raise ConfigError(f"epsilon 与 delta 必须在 (0,1] 内: {epsilon}, {delta}")
    if not scale > 0:
        raise ConfigError(f"scale 必须为正: {scale}")
    if preset not in PRESETS:
        raise ConfigError(f"未知预设 {preset}，可选 {PRESETS}")


def make_parameters(
    n_states: int,
    n_actions: int,
    horizon: int,
    epsilon: float,
    delta: float,
    scale: float = 1.0,
    preset: str = "desk",
    epsilon_est: Optional[float] = None,
    n_est: Optional[int] = None,
    n_collect: Optional[int] = None,
    n_generative: Optional[int] = None,
) -> PipelineParameters:
    """按预设计算 eps_est 与各采样数，显式给出的值优先

    两个预设的 N_est 都是 ceil(scale·300·log(6|S||A|/δ)/eps_est)。

    theory: eps_est、N_collect、N_gen 取理论公式，计数乘以 scale。
    desk:   eps_est = eps；N_collect = ceil(scale·16/eps_est·log(3|S||A|/δ))；
            N_gen = ceil(scale·|S|^5·|A|^3·H/eps^3)，即理论 N_gen 乘以 2^-29。
    """
    _check_common(epsilon, delta, scale, preset)
    if epsilon_est is not None and not 0.0 < epsilon_est <= 1.0:
        raise ConfigError(f"eps_est 必须在 (0,1] 内: {epsilon_est}")
    counts = (
        ("n_est", n_est),
        ("n_collect", n_collect),
        ("n_generative", n_generative),
    )
    for name, value in counts:
        if value is not None and value < 1:
            raise ConfigError(f"{name} 必须为正整数: {value}")
    s, a = n_states, n_actions
    theory = theoretical_parameters(s, a, horizon, epsilon, delta)
    est_log = math.log(6.0 * s * a / delta)

    if preset == "theory":
        if epsilon_est is None:
            epsilon_est = 10.0**theory.log10_epsilon_est
            est = scaled_count(theory.log10_n_est, scale)
        else:
            est = scaled_count(_log10(300.0 * est_log / epsilon_est), scale)
        collect = scaled_count(theory.log10_n_collect, scale)
        gen = scaled_count(theory.log10_n_generative, scale)
    else:
        if epsilon_est is None:
            epsilon_est = epsilon
        est = float(max(math.ceil(scale * 300.0 * est_log / epsilon_est), 1))
        collect_log = math.log(3.0 * s * a / delta)
        collect = float(max(math.ceil(scale * 16.0 / epsilon_est * collect_log), 1))
        gen_count = s**5 * a**3 * horizon / epsilon**3
        gen = float(max(math.ceil(scale * gen_count), 1))

    return PipelineParameters(
        preset=preset,
        epsilon=epsilon,
        delta=delta,
        scale=scale,
        epsilon_est=epsilon_est,
        n_est=est if n_est is None else float(n_est),
        n_collect=collect if n_collect is None else float(n_collect),
        n_generative=gen if n_generative is None else float(n_generative),
        theory=theory,
    )


# ---------------------------------------------------------------------------
# 学习流程

DIAGNOSTIC_COLUMNS = [
    "preset",
    "scale",
    "epsilon_est",
    "n_est",
    "n_collect",
    "n_generative",
    "log10_theory_epsilon_est",
    "log10_theory_n_est",
    "log10_theory_n_collect",
    "log10_theory_n_generative",
    "reuse_phase_samples",
    "full_batches",
    "contains_true_model",
    "pessimistic_value",
    "optimistic_value",
    "planned_value",
    "epsilon_hat",
]


@dataclass
class PipelineDiagnostics:
    algorithm: str
    parameters: PipelineParameters
    episodes: int = 0
    queries: int = 0
    batches: float = 0.0
    full_batches: int = 0
    quantiles: Optional[QuantileTable] = None
    contains_true_model: Optional[bool] = None
    pessimistic_value: Optional[float] = None
    optimistic_value: Optional[float] = None
    epsilon_hat: Optional[float] = None
    planned_value: Optional[float] = None
    reuse_phase_samples: bool = False

    def as_row(self) -> Dict[str, Any]:
        """DIAGNOSTIC_COLUMNS 各列；只列出本流程用到的采样数与其理论值"""
        params, theory = self.parameters, self.parameters.theory
        row: Dict[str, Any] = {column: None for column in DIAGNOSTIC_COLUMNS}
        row.update(
            preset=params.preset,
            scale=params.scale,
            reuse_phase_samples=self.reuse_phase_samples,
            full_batches=self.full_batches,
            contains_true_model=self.contains_true_model,
            pessimistic_value=self.pessimistic_value,
            optimistic_value=self.optimistic_value,
            planned_value=self.planned_value,
            epsilon_hat=self.epsilon_hat,
        )
        if self.algorithm == "pessimistic":
            row.update(
                epsilon_est=params.epsilon_est,
                n_est=None if self.reuse_phase_samples else params.n_est,
                n_collect=params.n_collect,
                log10_theory_epsilon_est=theory.log10_epsilon_est,
                log10_theory_n_est=theory.log10_n_est,
                log10_theory_n_collect=theory.log10_n_collect,
            )
        else:
            row.update(
                n_generative=params.n_generative,
                log10_theory_n_generative=theory.log10_n_generative,
            )
        return row


def _require(count: float, what: str) -> int:
    if not math.isfinite(count):
        raise BudgetExceededError(count, math.inf, what)
    return int(count)


def reward_bounds(model_set: IntervalModelSet) -> Tuple[np.ndarray, np.ndarray]:
    reward, width = model_set.center.reward, model_set.reward_width
    return np.clip(reward - width, 0.0, 1.0), np.clip(reward + width, 0.0, 1.0)


def certificate(
    model_set: IntervalModelSet, policy: Policy
) -> Tuple[float, float, float]:
    """eps_hat = max_pi 乐观价值（R̂+w_R）- 返回策略的悲观价值（R̂-w_R）

    真实模型在集合内且奖励在区间内时，V* - V^pi <= eps_hat。
    """
    low, high = reward_bounds(model_set)
    _, upper = optimistic_plan(model_set, reward=high)
    lower = pessimistic_policy_value(policy, model_set, reward=low)
    return max(upper - lower, 0.0), upper, lower


class PessimisticLearner(LoggerMixin):
    """回合式访问下的悲观规划流程

    估计分位数 -> 采样 -> 截断模型 -> 置信区间 -> 鲁棒规划。
    """

    def __init__(
        self,
        env: EpisodicEnv,
        parameters: PipelineParameters,
        reuse_phase_samples: bool = False,
    ) -> None:
        self.env = env
        self.parameters = parameters
        self.reuse_phase_samples = reuse_phase_samples
        self.dataset: Optional[TrajectoryDataset] = None
        self.model_set: Optional[IntervalModelSet] = None
        self._init_logger()

    def episodes_required(self) -> float:
        mdp = self.env.mdp
        lists = self.parameters.n_collect
        if not self.reuse_phase_samples:
            lists += self.parameters.n_est
        return lists * episodes_per_list(mdp.n_states, mdp.n_actions)

    def run(self, rng: RngStream) -> Tuple[Policy, PipelineDiagnostics]:
        params = self.parameters
        required = self.env.episodes + self.episodes_required()
        if required > self.env.budget:
            self._log(
                logging.WARNING,
                f"悲观规划需要 {required:.6g} 个回合，超过预算 {self.env.budget}",
            )
            raise BudgetExceededError(required, self.env.budget, "episodes")
        n_est = _require(params.n_est, "lists")
        n_collect = _require(params.n_collect, "lists")
        horizon = self.env.horizon

        collector = SampleCollector(self.env)
        collector.log_enabled, collector.log_level = self.log_enabled, self.log_level
        quantiles = None
        if not self.reuse_phase_samples:
            quantiles = collector.estimate_quantiles(
                params.epsilon_est, params.delta, rng.substream(0), n_lists=n_est
            )
        dataset = collector.collect_samples(n_collect, rng.substream(1), params.scale)
        if quantiles is None:
            self._log(logging.WARNING, "复用采样阶段的数据估计分位数，两个阶段不再独立")
            quantiles = quantiles_from_counts(
                dataset_counts(dataset), params.epsilon_est, params.delta, horizon
            )

        model = build_truncated_model(dataset, quantiles)
        model_set = confidence_widths(
            model, quantiles, n_collect, params.epsilon_est, params.delta
        )
        policy, value = pessimistic_plan(model_set)
        epsilon_hat, upper, _ = certificate(model_set, policy)
        inside = contains(model_set, self.env.mdp)
        self._log(
            logging.INFO,
            f"规划完成: 悲观价值 {value:.6g}，eps_hat {epsilon_hat:.6g}，"
            f"真实模型在集合内 {inside}",
        )

        self.dataset = dataset
        self.model_set = model_set
        diagnostics = PipelineDiagnostics(
            algorithm="pessimistic",
            parameters=params,
            episodes=self.env.episodes,
            quantiles=quantiles,
            contains_true_model=inside,
            pessimistic_value=value,
            optimistic_value=upper,
            epsilon_hat=epsilon_hat,
            reuse_phase_samples=self.reuse_phase_samples,
        )
        return policy, diagnostics


class GenerativeLearner(LoggerMixin):
    """生成模型访问：每个 (s, a) 抽 N 次，在 M̂ 上规划"""

    def __init__(
        self, sampler: GenerativeSampler, parameters: PipelineParameters
    ) -> None:
        self.sampler = sampler
        self.parameters = parameters
        self.model: Optional[EstimatedModel] = None
        self._init_logger()

    def queries_required(self) -> float:
        mdp = self.sampler.mdp
        return (mdp.n_states * mdp.n_actions + 1) * self.parameters.n_generative

    def run(self, rng: RngStream) -> Tuple[Policy, PipelineDiagnostics]:
        required = self.sampler.queries + self.queries_required()
        if required > self.sampler.budget:
            self._log(
                logging.WARNING,
                f"生成模型需要 {required:.6g} 次查询，超过预算 {self.sampler.budget}",
            )
            raise BudgetExceededError(required, self.sampler.budget, "queries")
        n = _require(self.parameters.n_generative, "queries")

        self._log(logging.INFO, f"生成模型采样: 每个 (s, a) {n} 次")
        model = build_generative_model(self.sampler, n, rng)
        policy, value = plan_empirical(model)
        self.model = model
        diagnostics = PipelineDiagnostics(
            algorithm="generative",
            parameters=self.parameters,
            queries=self.sampler.queries,
            batches=self.sampler.batches,
            full_batches=self.sampler.full_batches,
            planned_value=value,
        )
        return policy, diagnostics


def run_pessimistic_pipeline(
    env: EpisodicEnv,
    epsilon: float,
    delta: float,
    scale: float,
    rng: RngStream,
    preset: str = "desk",
    reuse_phase_samples: bool = False,
    epsilon_est: Optional[float] = None,
    n_est: Optional[int] = None,
    n_collect: Optional[int] = None,
) -> Tuple[Policy, PipelineDiagnostics]:
    mdp = env.mdp
    params = make_parameters(
        mdp.n_states,
        mdp.n_actions,
        mdp.horizon,
        epsilon,
        delta,
        scale,
        preset,
        epsilon_est=epsilon_est,
        n_est=n_est,
        n_collect=n_collect,
    )
    return PessimisticLearner(env, params, reuse_phase_samples).run(rng)


def run_generative_pipeline(
    mdp: FiniteMdp,
    epsilon: float,
    delta: float,
    scale: float,
    rng: RngStream,
    preset: str = "desk",
    budget: Optional[float] = None,
    n_generative: Optional[int] = None,
) -> Tuple[Policy, PipelineDiagnostics]:
    params = make_parameters(
        mdp.n_states,
        mdp.n_actions,
        mdp.horizon,
        epsilon,
        delta,
        scale,
        preset,
        n_generative=n_generative,
    )
    return GenerativeLearner(GenerativeSampler(mdp, budget), params).run(rng)
