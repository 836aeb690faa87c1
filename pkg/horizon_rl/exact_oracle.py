"""
精确（非采样）计算：策略价值、最优策略、到达概率、折扣价值、
轨迹概率以及访问次数分布的精确分位数。

小规模实例上的真值来源，所有随机检验都以这里的结果为准。
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from horizon_rl.errors import CapExceededError, InvariantViolationError, PolicyError
from horizon_rl.mdp_core import (
    FiniteMdp,
    MarkovChain,
    Policy,
    TIE_TOL,
    enumerate_stationary_policies,
    greedy_actions,
    nonstationary_policy_tables,
)
from horizon_rl.settings import SETTINGS

QUANTILE_TOL = 1e-12


# ---------------------------------------------------------------------------
# 数组层面的逆向归纳，规划器与神谕共用


def evaluate_table(
    transition: np.ndarray, reward: np.ndarray, table: np.ndarray
) -> np.ndarray:
    """按动作表逆向归纳，返回 (H+1, S) 价值表，V_H = 0"""
    horizon, n_states = table.shape
    index = np.arange(n_states)
    values = np.zeros((horizon + 1, n_states))
    for h in reversed(range(horizon)):
        actions = table[h]
        values[h] = reward[index, actions] + transition[index, actions] @ values[h + 1]
    return values


def backward_induction(
    transition: np.ndarray, reward: np.ndarray, horizon: int
) -> Tuple[np.ndarray, np.ndarray]:
    """返回 (动作表 (H, S), 价值表 (H+1, S))"""
    n_states = transition.shape[0]
    index = np.arange(n_states)
    values = np.zeros((horizon + 1, n_states))
    table = np.zeros((horizon, n_states), dtype=np.int64)
    for h in reversed(range(horizon)):
        q_values = reward + transition @ values[h + 1]
        table[h] = greedy_actions(q_values)
        values[h] = q_values[index, table[h]]
    return table, values


def _horizon(mdp: FiniteMdp, horizon: Optional[int]) -> int:
    return mdp.horizon if horizon is None else int(horizon)


def policy_value_table(
    mdp: FiniteMdp, policy: Policy, horizon: Optional[int] = None
) -> np.ndarray:
    horizon = _horizon(mdp, horizon)
    policy.validate(mdp.n_states, mdp.n_actions)
    return evaluate_table(mdp.transition, mdp.mean_reward, policy.table(horizon))


def finite_horizon_value(
    mdp: FiniteMdp, policy: Policy, horizon: Optional[int] = None
) -> float:
    """V^pi_{M,H} = E[sum_h r_h]，horizon 缺省为 mdp.horizon"""
    values = policy_value_table(mdp, policy, horizon)
    return float(mdp.initial @ values[0])


def optimal_nonstationary(
    mdp: FiniteMdp, horizon: Optional[int] = None
) -> Tuple[Policy, float]:
    table, values = backward_induction(
        mdp.transition, mdp.mean_reward, _horizon(mdp, horizon)
    )
    return Policy.nonstationary(table), float(mdp.initial @ values[0])


def best_stationary(
    mdp: FiniteMdp, cap: Optional[int] = None, horizon: Optional[int] = None
) -> Tuple[Policy, float]:
    best_policy, best_value = None, -np.inf
    for policy in enumerate_stationary_policies(mdp, cap):
        value = finite_horizon_value(mdp, policy, horizon)
        if value > best_value + TIE_TOL:
            best_policy, best_value = policy, value
    return best_policy, float(best_value)


# ---------------------------------------------------------------------------
# 折扣价值


def discounted_value_vector(mdp: FiniteMdp, policy: Policy, gamma: float) -> np.ndarray:
    if not policy.is_stationary:
        raise PolicyError("折扣价值只对平稳策略定义")
    if not 0.0 <= gamma < 1.0:
        raise InvariantViolationError(f"gamma 必须在 [0,1) 内，实际 {gamma}")
    policy.validate(mdp.n_states, mdp.n_actions)
    index = np.arange(mdp.n_states)
    rows = mdp.transition[index, policy.actions]
    rewards = mdp.mean_reward[index, policy.actions]
    return np.linalg.solve(np.eye(mdp.n_states) - gamma * rows, rewards)


def discounted_value(mdp: FiniteMdp, policy: Policy, gamma: float) -> float:
    return float(mdp.initial @ discounted_value_vector(mdp, policy, gamma))


def optimal_discounted_stationary(
    mdp: FiniteMdp,
    gamma: float,
    method: str = "auto",
    cap: Optional[int] = None,
    max_iterations: int = 10_000,
) -> Tuple[Policy, float]:
    """折扣最优平稳策略

    method: "enumerate" 穷举，"policy_iteration" 策略迭代，
    "auto" 在 |A|^|S| 不超过上限时穷举。
    """
    if cap is None:
        cap = SETTINGS["oracle.policy_cap"]
    if method == "auto":
        small = mdp.n_actions**mdp.n_states <= cap
        method = "enumerate" if small else "policy_iteration"

    if method == "enumerate":
        best_policy, best_value = None, -np.inf
        for policy in enumerate_stationary_policies(mdp, cap):
            value = discounted_value(mdp, policy, gamma)
            if value > best_value + TIE_TOL:
                best_policy, best_value = policy, value
        return best_policy, float(best_value)

    if method != "policy_iteration":
        raise ValueError(f"未知方法 {method}")

    actions = np.zeros(mdp.n_states, dtype=np.int64)
    for _ in range(max_iterations):
        policy = Policy.stationary(actions)
        values = discounted_value_vector(mdp, policy, gamma)
        q_values = mdp.mean_reward + gamma * (mdp.transition @ values)
        current = q_values[np.arange(mdp.n_states), actions]
        improve = current < q_values.max(axis=1) - TIE_TOL
        if not improve.any():
            return policy, float(mdp.initial @ values)
        actions = np.where(improve, greedy_actions(q_values), actions)
    raise RuntimeError("策略迭代未收敛")


# ---------------------------------------------------------------------------
# 马尔可夫链到达概率


def reach_profile(chain: MarkovChain, steps: int) -> np.ndarray:
    """返回 (steps+1, S) 数组，第 L 行是 p_L(., C) = mu P^L"""
    if steps > SETTINGS["oracle.max_reach_steps"]:
        raise CapExceededError(steps, SETTINGS["oracle.max_reach_steps"], "到达步数")
    profile = np.zeros((steps + 1, chain.n_states))
    profile[0] = chain.initial
    for L in range(steps):
        profile[L + 1] = profile[L] @ chain.transition
    return profile


def reach_probability(chain: MarkovChain, s: int, steps: int) -> float:
    return float(reach_profile(chain, steps)[steps, s])


def sequence_probability(chain: MarkovChain, states: Sequence[int]) -> float:
    """p(T, C) = mu(s_0) prod P(s_{h+1} | s_h)"""
    states = np.asarray(states, dtype=np.int64)
    prob = chain.initial[states[0]]
    if states.shape[0] > 1:
        prob *= np.prod(chain.transition[states[:-1], states[1:]])
    return float(prob)


# ---------------------------------------------------------------------------
# 轨迹


def trajectory_probability(
    mdp: FiniteMdp, policy: Policy, states: Sequence[int], actions: Sequence[int]
) -> float:
    """mu(s_0) prod_{(s,a,s')} P(s'|s,a)^{n(s,a,s')}，约定 0^0 = 1"""
    states = np.asarray(states, dtype=np.int64)
    actions = np.asarray(actions, dtype=np.int64)
    horizon = mdp.horizon
    if actions.shape[0] != horizon or states.shape[0] != horizon + 1:
        raise InvariantViolationError(f"轨迹长度必须为 H={horizon}")
    table = policy.table(horizon)
    if np.any(table[np.arange(horizon), states[:-1]] != actions):
        raise PolicyError("轨迹中的动作与策略不一致")

    counts = np.zeros(mdp.transition.shape)
    np.add.at(counts, (states[:-1], actions, states[1:]), 1)
    factors = np.where(counts > 0, mdp.transition**counts, 1.0)
    return float(mdp.initial[states[0]] * np.prod(factors))


def enumerate_trajectories(
    mdp: FiniteMdp, policy: Policy, cap: Optional[int] = None
) -> Iterator[Tuple[Tuple[int, ...], Tuple[int, ...], float]]:
    """逐个给出与策略相容的全部 |S|^(H+1) 条轨迹 (states, actions, prob)"""
    if cap is None:
        cap = SETTINGS["oracle.trajectory_cap"]
    horizon = mdp.horizon
    required = mdp.n_states ** (horizon + 1)
    if required > cap:
        raise CapExceededError(required, cap, "轨迹枚举")
    table = policy.table(horizon)
    for states in itertools.product(range(mdp.n_states), repeat=horizon + 1):
        actions = tuple(int(table[h, states[h]]) for h in range(horizon))
        yield states, actions, trajectory_probability(mdp, policy, states, actions)


def enumerated_value(
    mdp: FiniteMdp, policy: Policy, cap: Optional[int] = None
) -> float:
    """按轨迹枚举求和的价值，用作 finite_horizon_value 的独立对照"""
    reward = mdp.mean_reward
    total = 0.0
    for states, actions, prob in enumerate_trajectories(mdp, policy, cap):
        if prob > 0:
            total += prob * sum(reward[s, a] for s, a in zip(states, actions))
    return total


# ---------------------------------------------------------------------------
# 访问次数分布与分位数


@dataclass(frozen=True, eq=False)
class VisitationDistribution:
    """(s, a) 在 H 步内被访问次数的精确分布，probs[k] = Pr[count = k]"""

    pair: Tuple[int, int]
    probs: np.ndarray

    def __post_init__(self) -> None:
        probs = np.array(self.probs, dtype=np.float64)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        if (
            probs.ndim != 1
            or abs(probs.sum() - 1.0) > 1e-10
            or np.any(probs < -1e-15)
        ):
            raise InvariantViolationError("访问次数分布概率和必须为1")

    @property
    def max_count(self) -> int:
        return int(self.probs.shape[0] - 1)

    def tail(self, x: int) -> float:
        """Pr[count >= x]"""
        if x <= 0:
            return 1.0
        return float(self.probs[x:].sum())


def visitation_batch(
    transition: np.ndarray,
    initial: np.ndarray,
    tables: np.ndarray,
    pair: Tuple[int, int],
) -> np.ndarray:
    """对一批动作表同时做前向 DP，返回 (n, H+1) 的访问次数分布"""
    n_policies, horizon, n_states = tables.shape
    s, a = pair
    index = np.arange(n_states)
    dist = np.zeros((n_policies, n_states, horizon + 1))
    dist[:, :, 0] = initial
    for h in range(horizon):
        actions = tables[:, h, :]
        hit = actions[:, s] == a
        if hit.any():
            shifted = dist[hit, s, :-1].copy()
            dist[hit, s, 1:] = shifted
            dist[hit, s, 0] = 0.0
        rows = transition[index[None, :], actions]
        dist = np.einsum("nxk,nxy->nyk", dist, rows)
    return dist.sum(axis=1)


def visitation_distribution(
    mdp: FiniteMdp, policy: Policy, s: int, a: int, horizon: Optional[int] = None
) -> VisitationDistribution:
    horizon = _horizon(mdp, horizon)
    policy.validate(mdp.n_states, mdp.n_actions)
    table = np.asarray(policy.table(horizon))[None, :, :]
    probs = visitation_batch(mdp.transition, mdp.initial, table, (s, a))[0]
    return VisitationDistribution((s, a), probs)


def quantile_from_probs(probs: np.ndarray, epsilon: float) -> np.ndarray:
    """按行计算 Q_eps：最大的整数 x 使 Pr[X >= x] >= eps"""
    probs = np.atleast_2d(probs)
    tail = np.cumsum(probs[:, ::-1], axis=1)[:, ::-1]
    ok = tail >= epsilon - QUANTILE_TOL
    ok[:, 0] = True
    width = probs.shape[1]
    return width - 1 - np.argmax(ok[:, ::-1], axis=1)


def exact_quantile(dist: VisitationDistribution, epsilon: float) -> int:
    if not 0.0 < epsilon <= 1.0:
        raise InvariantViolationError(f"epsilon 必须在 (0,1] 内，实际 {epsilon}")
    return int(quantile_from_probs(dist.probs, epsilon)[0])


def max_quantile_over_policies(
    mdp: FiniteMdp,
    epsilon: float,
    pair: Tuple[int, int],
    cap: Optional[int] = None,
    batch_size: int = 8192,
) -> Tuple[int, Policy]:
    """穷举 (h, s) 非平稳策略，返回 max_pi Q^pi_eps(s, a) 及首个达到它的策略"""
    tables = nonstationary_policy_tables(mdp.n_states, mdp.n_actions, mdp.horizon, cap)
    best, best_index = -1, 0
    for start in range(0, tables.shape[0], batch_size):
        chunk = tables[start : start + batch_size]
        probs = visitation_batch(mdp.transition, mdp.initial, chunk, pair)
        quantiles = quantile_from_probs(probs, epsilon)
        top = int(quantiles.max())
        if top > best:
            best, best_index = top, start + int(np.argmax(quantiles))
    return best, Policy.nonstationary(tables[best_index])


def max_visit_probability(
    mdp: FiniteMdp, pair: Tuple[int, int], k: int, horizon: Optional[int] = None
) -> float:
    """计数增广 DP：所有（可依赖历史的）策略下 Pr[count >= k] 的最大值

    k = 1 时等于非平稳马尔可夫策略下的最大到达概率。
    """
    if k <= 0:
        return 1.0
    horizon = _horizon(mdp, horizon)
    zs, za = pair
    values = np.zeros((mdp.n_states, k + 1))
    values[:, k] = 1.0
    bumped = np.minimum(np.arange(k + 1) + 1, k)
    for _ in range(horizon):
        q_values = np.einsum("sat,tc->sac", mdp.transition, values)
        q_values[zs, za, :] = q_values[zs, za, bumped]
        values = q_values.max(axis=1)
    return float(mdp.initial @ values[:, 0])


# ---------------------------------------------------------------------------
# 吸收态构造：执行 z 后转入终止态并得到奖励 1


def absorbing_reach_model(
    mdp: FiniteMdp, pair: Tuple[int, int]
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """返回增加终止态后的 (transition, reward, initial)

    在该模型上任一策略的 H 步价值等于原模型中 H 步内执行过 z 的概率。
    """
    n_states, n_actions = mdp.n_states, mdp.n_actions
    terminal = n_states
    transition = np.zeros((n_states + 1, n_actions, n_states + 1))
    transition[:n_states, :, :n_states] = mdp.transition
    transition[terminal, :, terminal] = 1.0
    zs, za = pair
    transition[zs, za, :] = 0.0
    transition[zs, za, terminal] = 1.0
    reward = np.zeros((n_states + 1, n_actions))
    reward[zs, za] = 1.0
    initial = np.append(mdp.initial, 0.0)
    return transition, reward, initial


def max_reach_probability(
    mdp: FiniteMdp, pair: Tuple[int, int], horizon: Optional[int] = None
) -> float:
    transition, reward, initial = absorbing_reach_model(mdp, pair)
    _, values = backward_induction(transition, reward, _horizon(mdp, horizon))
    return float(initial @ values[0])


def stationary_reach_probability(
    mdp: FiniteMdp, policy: Policy, pair: Tuple[int, int], horizon: Optional[int] = None
) -> float:
    if not policy.is_stationary:
        raise PolicyError("需要平稳策略")
    transition, reward, initial = absorbing_reach_model(mdp, pair)
    actions = np.append(policy.actions, 0)
    table = np.broadcast_to(actions, (_horizon(mdp, horizon), actions.shape[0]))
    values = evaluate_table(transition, reward, table)
    return float(initial @ values[0])


def stationary_values(
    mdp: FiniteMdp, horizon: Optional[int] = None, cap: Optional[int] = None
) -> List[Tuple[Policy, float]]:
    policies = enumerate_stationary_policies(mdp, cap)
    return [(p, finite_horizon_value(mdp, p, horizon)) for p in policies]
