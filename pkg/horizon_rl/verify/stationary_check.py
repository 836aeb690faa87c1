"""
平稳策略与非平稳策略的比较：折扣价值、半程价值、近似最优性、
到达概率与访问次数分位数，以及总奖励有界假设下的单步奖励上界。

所有价值与概率都由 exact_oracle 精确计算。
"""
from __future__ import annotations

import math
from dataclasses import replace
from typing import List, Optional, Tuple

import numpy as np

from horizon_rl.errors import CapExceededError
from horizon_rl.exact_oracle import (
    best_stationary,
    discounted_value,
    exact_quantile,
    finite_horizon_value,
    max_quantile_over_policies,
    max_reach_probability,
    max_visit_probability,
    optimal_nonstationary,
    stationary_reach_probability,
    visitation_distribution,
)
from horizon_rl.instances import random_mdp, twostate_exit
from horizon_rl.mdp_core import (
    FiniteMdp,
    Policy,
    enumerate_stationary_policies,
    validate_bounded_total_reward,
)
from horizon_rl.sim_env import RngStream
from horizon_rl.verify.checks_runner import (
    CheckBase,
    CheckReport,
    divide_power,
    leq,
    make_report,
)

Pair = Tuple[int, int]


def reach_log_constant(n_states: int) -> float:
    """ln(8·|S|^{4|S|})"""
    return math.log(8.0) + 4 * n_states * math.log(n_states)


def discount_factor(n_states: int, horizon: int) -> float:
    return 1.0 - reach_log_constant(n_states) / horizon


def check_discount_finite(mdp: FiniteMdp, policy: Policy) -> CheckReport:
    """V_H/(64|S|^{8|S|}) <= V_gamma <= 2 V_H，gamma = 1 - ln(8|S|^{4|S|})/H

    报告中 lhs = V_gamma，rhs = 2 V_H，下界并入 pass 判断，slack 取两侧余量的较小者。
    """
    n_states, horizon = mdp.n_states, mdp.horizon
    long_enough = horizon >= 2.0 * reach_log_constant(n_states)
    hypothesis_ok = policy.is_stationary and long_enough
    gamma = min(max(discount_factor(n_states, horizon), 0.0), 1.0 - 1e-12)
    v_finite = finite_horizon_value(mdp, policy)
    v_discounted = discounted_value(mdp, policy, gamma)
    lower = divide_power(v_finite, 64.0, n_states, 8 * n_states)
    upper = 2.0 * v_finite
    holds = leq(lower, v_discounted) and leq(v_discounted, upper)
    slack = min(v_discounted - lower, upper - v_discounted)
    return make_report(
        "discount_finite_compare",
        f"S={n_states},H={horizon},gamma={gamma:.6g},pi={policy!r}",
        hypothesis_ok,
        v_discounted,
        upper,
        holds=holds,
        slack=slack,
    )


def check_half_trajectory(mdp: FiniteMdp, policy: Policy) -> CheckReport:
    """V_H/(4|S|^{4|S|}) <= V_{floor(H/2)}"""
    n_states, horizon = mdp.n_states, mdp.horizon
    hypothesis_ok = policy.is_stationary and horizon >= 2 * n_states
    v_full = finite_horizon_value(mdp, policy)
    v_half = finite_horizon_value(mdp, policy, horizon // 2) if horizon >= 2 else 0.0
    lhs = divide_power(v_full, 4.0, n_states, 4 * n_states)
    instance = f"S={n_states},H={horizon},pi={policy!r}"
    return make_report("half_trajectory", instance, hypothesis_ok, lhs, v_half)


def check_stationary_near_optimal(
    mdp: FiniteMdp, cap: Optional[int] = None
) -> CheckReport:
    """最优平稳价值 >= V*/(128|S|^{8|S|})"""
    n_states, horizon = mdp.n_states, mdp.horizon
    hypothesis_ok = horizon >= 2.0 * reach_log_constant(n_states)
    _, v_star = optimal_nonstationary(mdp)
    _, v_stationary = best_stationary(mdp, cap)
    lhs = divide_power(v_star, 128.0, n_states, 8 * n_states)
    return make_report(
        "non_stationary_nearly_optimal",
        f"S={n_states},H={horizon}",
        hypothesis_ok,
        lhs,
        v_stationary,
    )


def check_reaching_stationary(
    mdp: FiniteMdp, pair: Pair, cap: Optional[int] = None
) -> CheckReport:
    """某个平稳策略在前 floor(H/2) 步到达 z 的概率
    >= max_pi' Pr[H 步内到达 z] / (512(|S|+1)^{12(|S|+1)})
    """
    n_states, horizon = mdp.n_states, mdp.horizon
    hypothesis_ok = horizon >= 2.0 * reach_log_constant(n_states + 1)
    best_any = max_reach_probability(mdp, pair)
    best_stationary_reach = max(
        stationary_reach_probability(mdp, policy, pair, horizon // 2)
        for policy in enumerate_stationary_policies(mdp, cap)
    )
    lhs = divide_power(best_any, 512.0, n_states + 1, 12 * (n_states + 1))
    return make_report(
        "reaching_stationary",
        f"S={n_states},H={horizon},z={pair}",
        hypothesis_ok,
        lhs,
        best_stationary_reach,
    )


def history_quantile(
    mdp: FiniteMdp, pair: Pair, epsilon: float, horizon: Optional[int] = None
) -> int:
    """最大的 k 使某个（可依赖历史的）策略满足 Pr[count >= k] >= eps

    不小于非平稳马尔可夫策略上的最大 eps 分位数。
    """
    horizon = mdp.horizon if horizon is None else horizon
    k = 0
    while k < horizon:
        if max_visit_probability(mdp, pair, k + 1, horizon) < epsilon - 1e-12:
            break
        k += 1
    return k


def policy_quantile_bound(
    mdp: FiniteMdp, pair: Pair, epsilon: float, cap: Optional[int] = None
) -> Tuple[int, bool]:
    """max_pi Q^pi_eps(z)：可穷举时精确计算，否则返回计数增广 DP 给出的上界

    第二个返回值表示是否精确。
    """
    try:
        value, _ = max_quantile_over_policies(mdp, epsilon, pair, cap)
        return value, True
    except CapExceededError:
        return history_quantile(mdp, pair, epsilon), False


def check_quantile_comparison(
    mdp: FiniteMdp,
    pair: Pair,
    epsilon: float,
    f: Optional[int] = None,
    cap: Optional[int] = None,
) -> CheckReport:
    """存在平稳策略，前 floor(H/2) 步的 1/2 分位数 >= floor(eps·f/(2048|S|^{12|S|}))

    f 缺省取 max_pi Q^pi_eps(z)。无法穷举时用上界代替，
    上界通过意味着所有可取的 f 都通过。
    """
    n_states, horizon = mdp.n_states, mdp.horizon
    s_z, a_z = pair
    attainable, exact = policy_quantile_bound(mdp, pair, epsilon, cap)
    if f is None:
        f = attainable
    hypothesis_ok = (
        bool(mdp.initial[s_z] >= 1.0 - 1e-12)
        and horizon >= 2.0 * reach_log_constant(n_states)
        and 0 <= f <= attainable
    )
    lhs = math.floor(divide_power(epsilon * f, 2048.0, n_states, 12 * n_states))
    rhs = max(
        exact_quantile(
            visitation_distribution(mdp, policy, s_z, a_z, horizon // 2), 0.5
        )
        for policy in enumerate_stationary_policies(mdp, cap)
    )
    tag = "exact" if exact else "upper"
    instance = f"S={n_states},H={horizon},z={pair},eps={epsilon:g},f={f}({tag})"
    return make_report("quantile_comparison", instance, hypothesis_ok, lhs, rhs)


def check_reward_structure(mdp: FiniteMdp, pair: Pair, epsilon: float) -> CheckReport:
    """某策略以至少 eps 的概率访问 z 两次以上时，R(z) 的最大支撑点 <= 2|S|/H"""
    n_states, horizon = mdp.n_states, mdp.horizon
    s, a = pair
    twice = max_visit_probability(mdp, pair, 2)
    hypothesis_ok = (
        validate_bounded_total_reward(mdp).ok
        and horizon >= n_states
        and epsilon > 0
        and twice >= epsilon
    )
    lhs = float(mdp.max_reward[s, a])
    rhs = 2.0 * n_states / horizon
    instance = f"S={n_states},H={horizon},z={pair},Pr2={twice:.4g}"
    return make_report("reward", instance, hypothesis_ok, lhs, rhs)


def point_initial(mdp: FiniteMdp, state: int) -> FiniteMdp:
    initial = np.zeros(mdp.n_states)
    initial[state] = 1.0
    return mdp.replace(initial=initial)


class StationaryCheck(CheckBase):
    """随机小MDP与两状态离开实例上的平稳性比较

    配置项: instances, state_counts, action_counts, horizon, sparsity,
    include_twostate, reward_epsilon, quantile_epsilon
    """

    lemma_ids = (
        "discount_finite_compare",
        "half_trajectory",
        "non_stationary_nearly_optimal",
        "reaching_stationary",
        "quantile_comparison",
        "reward",
    )

    def _mdp_reports(
        self, mdp: FiniteMdp, gen: np.random.Generator, tag: str
    ) -> List[CheckReport]:
        policy = Policy.stationary(gen.integers(mdp.n_actions, size=mdp.n_states))
        pair = (int(gen.integers(mdp.n_states)), int(gen.integers(mdp.n_actions)))
        quantile_epsilon = float(self.param("quantile_epsilon", 0.25))
        reports = [
            check_discount_finite(mdp, policy),
            check_half_trajectory(mdp, policy),
            check_stationary_near_optimal(mdp),
            check_reaching_stationary(mdp, pair),
            check_quantile_comparison(
                point_initial(mdp, pair[0]), pair, quantile_epsilon
            ),
        ]
        epsilon = float(self.param("reward_epsilon", 1e-9))
        for s in range(mdp.n_states):
            for a in range(mdp.n_actions):
                reports.append(check_reward_structure(mdp, (s, a), epsilon))
        return [replace(r, instance_id=f"{tag}:{r.instance_id}") for r in reports]

    def run(self, rng: RngStream) -> List[CheckReport]:
        horizon = int(self.param("horizon", 64))
        reports: List[CheckReport] = []
        if self.param("include_twostate", True):
            gen = rng.substream(0).generator
            mdp = twostate_exit(horizon)
            reports.extend(self._mdp_reports(mdp, gen, "twostate-exit"))

        state_counts = self.param("state_counts", [2])
        action_counts = self.param("action_counts", [2])
        sparsity = float(self.param("sparsity", 0.3))
        for i in range(int(self.param("instances", 20))):
            stream = rng.substream(1, i)
            gen = stream.substream(1).generator
            n_states = int(state_counts[int(gen.integers(len(state_counts)))])
            n_actions = int(action_counts[int(gen.integers(len(action_counts)))])
            mdp = random_mdp(
                n_states, n_actions, horizon, stream.substream(0), sparsity
            )
            reports.extend(self._mdp_reports(mdp, gen, f"mdp-{i}"))
        return reports
