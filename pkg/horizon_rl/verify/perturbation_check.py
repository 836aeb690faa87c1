"""
扰动分析：乘积的乘法扰动、两条对数/指数初等不等式，
以及模型参数在给定半宽内变化时策略价值的上下界。
"""
from __future__ import annotations

import math
from dataclasses import replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import numpy.typing as npt

from horizon_rl.exact_oracle import (
    exact_quantile,
    finite_horizon_value,
    visitation_distribution,
)
from horizon_rl.instances import random_mdp
from horizon_rl.mdp_core import FiniteMdp, Policy
from horizon_rl.sim_env import RngStream
from horizon_rl.verify.checks_runner import CheckBase, CheckReport, make_report

HYPOTHESIS_TOL = 1e-12
SHRINK = 0.999

Widths = Tuple[np.ndarray, np.ndarray, np.ndarray]


# ---------------------------------------------------------------------------
# 初等不等式


def check_log_facts(n_points: int = 10_000) -> List[CheckReport]:
    """|x| <= 1/2 时 x - x² <= log(1+x) <= x，1 + x <= e^x <= 1 + 2|x|

    每条不等式一个报告，lhs 为网格上 (左 - 右) 的最大值，rhs = 0。
    """
    x = np.linspace(-0.5, 0.5, n_points)
    log1p, expm1 = np.log1p(x), np.expm1(x)
    sides = [
        ("fac_log:log_lower", x - x * x, log1p),
        ("fac_log:log_upper", log1p, x),
        ("fac_log:exp_lower", x, expm1),
        ("fac_log:exp_upper", expm1, 2.0 * np.abs(x)),
    ]
    reports = []
    for lemma_id, left, right in sides:
        worst = float(np.max(left - right))
        holds = worst <= 1e-15
        instance = f"grid={n_points}"
        reports.append(make_report(lemma_id, instance, True, worst, 0.0, holds=holds))
    return reports


def _as_arrays(*values: npt.ArrayLike) -> Tuple[np.ndarray, ...]:
    return tuple(np.asarray(v, dtype=np.float64) for v in values)


def mult_add_hypothesis(
    p: np.ndarray,
    delta: np.ndarray,
    m: float,
    gamma: np.ndarray,
    mbar: float,
    nbar: int,
    epsilon: float,
) -> bool:
    p, delta, gamma = _as_arrays(p, delta, gamma)
    n = p.shape[0]
    tol = HYPOTHESIS_TOL
    return bool(
        mbar >= 1
        and nbar >= n >= 1
        and 0.0 <= epsilon <= 1.0 / (8.0 * nbar) + tol
        and np.all(p >= 1.0 / mbar - tol)
        and np.all(p <= 1.0)
        and p.sum() <= 1.0 + tol
        and np.all(np.abs(delta) <= epsilon * np.sqrt(p / mbar) + tol)
        and abs(delta.sum()) <= epsilon * nbar / mbar + tol
        and -tol <= m <= mbar + tol
        and np.all(np.abs(gamma) <= np.sqrt(p * mbar) + tol)
    )


def check_mult_add(
    p: np.ndarray,
    delta: np.ndarray,
    m: float,
    gamma: np.ndarray,
    mbar: float,
    nbar: int,
    epsilon: float,
) -> CheckReport:
    """prod (p_i + δ_i)^{p_i m + Γ_i} / prod p_i^{p_i m + Γ_i} 落在 [1 - 8n̄ε, 1 + 8n̄ε] 内

    比值在对数空间计算，报告 lhs = |比值 - 1|，rhs = 8n̄ε。
    """
    p, delta, gamma = _as_arrays(p, delta, gamma)
    hypothesis_ok = mult_add_hypothesis(p, delta, m, gamma, mbar, nbar, epsilon)
    exponent = p * m + gamma
    ratio = math.exp(float(np.sum(exponent * np.log1p(delta / p))))
    instance = f"n={p.shape[0]},nbar={nbar},mbar={mbar:g},eps={epsilon:.4g}"
    return make_report(
        "mult-add", instance, hypothesis_ok, abs(ratio - 1.0), 8.0 * nbar * epsilon
    )


def random_mult_add_instance(
    gen: np.random.Generator, max_n: int = 5, max_mbar: int = 1000
) -> Dict[str, Any]:
    """在假设集合内随机取一组参数"""
    n = int(gen.integers(1, max_n + 1))
    nbar = n + int(gen.integers(0, 3))
    mbar = float(gen.integers(n, max_mbar + 1))
    p = 1.0 / mbar + (1.0 - n / mbar) * gen.dirichlet(np.ones(n + 1))[:n]
    epsilon = float(gen.uniform(0.0, 1.0 / (8.0 * nbar)))
    delta = gen.uniform(-1.0, 1.0, n) * epsilon * np.sqrt(p / mbar)
    total_cap = epsilon * nbar / mbar
    if abs(delta.sum()) > total_cap:
        delta *= total_cap / abs(delta.sum())
    m = float(gen.uniform(0.0, mbar))
    gamma = gen.uniform(-1.0, 1.0, n) * np.sqrt(p * mbar)
    return dict(
        p=p, delta=delta, m=m, gamma=gamma, mbar=mbar, nbar=nbar, epsilon=epsilon
    )


# ---------------------------------------------------------------------------
# 价值扰动


def _check_epsilon(epsilon: float) -> bool:
    return 0.0 < epsilon <= 0.5


def visitation_quantiles(mdp: FiniteMdp, policy: Policy, epsilon: float) -> np.ndarray:
    """m̄(s, a) = Q^pi_eps(s, a)，形状 (S, A)"""
    values = np.zeros((mdp.n_states, mdp.n_actions), dtype=np.int64)
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            distribution = visitation_distribution(mdp, policy, s, a)
            values[s, a] = exact_quantile(distribution, epsilon)
    return values


def episodic_widths(mdp: FiniteMdp, policy: Policy, epsilon: float) -> Widths:
    """回合式扰动引理允许的 (w_P, w_R, w_mu)，m̄ = 0 的行不受约束（宽度 inf）"""
    n_states, n_actions = mdp.n_states, mdp.n_actions
    sa = n_states * n_actions
    mbar = visitation_quantiles(mdp, policy, epsilon / (12.0 * sa))
    constrained = mbar >= 1
    m = np.maximum(mbar, 1).astype(np.float64)

    floor = (epsilon / (72.0 * m * sa))[:, :, None]
    p_scale = epsilon / (96.0 * n_states**2 * n_actions)
    w_p = p_scale * np.maximum(np.sqrt(mdp.transition * floor), floor)
    r_scale = epsilon / (24.0 * sa)
    w_r = r_scale * np.maximum(np.sqrt(mdp.reward_second_moment / m), 1.0 / m)
    w_p = np.where(constrained[:, :, None], w_p, np.inf)
    w_r = np.where(constrained, w_r, np.inf)
    w_mu = np.full(n_states, epsilon / (6.0 * n_states))
    return w_p, w_r, w_mu


def generative_widths(mdp: FiniteMdp, epsilon: float) -> Widths:
    """生成模型扰动引理允许的 (w_P, w_R, w_mu)，对所有项都有约束"""
    n_states, n_actions, horizon = mdp.n_states, mdp.n_actions, mdp.horizon
    sa = n_states * n_actions
    floor = epsilon / (576.0 * horizon * sa)
    p_scale = epsilon / (192.0 * n_states**2 * n_actions)
    w_p = p_scale * np.maximum(np.sqrt(mdp.transition * floor), floor)
    second = mdp.reward_second_moment / horizon
    w_r = epsilon / (48.0 * sa) * np.maximum(np.sqrt(second), 1.0 / horizon)
    w_mu = np.full(n_states, epsilon / (12.0 * n_states))
    return w_p, w_r, w_mu


def within_widths(mdp: FiniteMdp, estimate: FiniteMdp, widths: Widths) -> bool:
    w_p, w_r, w_mu = widths
    tol = HYPOTHESIS_TOL
    return bool(
        np.all(np.abs(estimate.transition - mdp.transition) <= w_p + tol)
        and np.all(np.abs(estimate.mean_reward - mdp.mean_reward) <= w_r + tol)
        and np.all(np.abs(estimate.initial - mdp.initial) <= w_mu + tol)
    )


def _transfer(
    row: np.ndarray, widths: np.ndarray, gen: np.random.Generator
) -> np.ndarray:
    """在两个分量之间转移质量，保持和为1、非负且每个分量的变化不超过宽度"""
    row = np.array(row)
    n = row.shape[0]
    if n < 2:
        return row
    source, target = gen.choice(n, size=2, replace=False)
    limit = min(widths[source], widths[target], row[source]) * SHRINK
    amount = gen.uniform(0.0, limit) if limit > 0 else 0.0
    row[source] -= amount
    row[target] += amount
    return np.clip(row, 0.0, None)


def perturb_mdp(
    mdp: FiniteMdp,
    widths: Widths,
    gen: np.random.Generator,
    perturb_transition: bool = True,
    perturb_initial: bool = True,
) -> FiniteMdp:
    """在半宽内随机扰动，宽度为 inf 的行或奖励重新随机生成，返回奖励为确定值的MDP"""
    w_p, w_r, w_mu = widths
    n_states, n_actions = mdp.n_states, mdp.n_actions
    transition = np.array(mdp.transition)
    if perturb_transition:
        for s in range(n_states):
            for a in range(n_actions):
                if np.isinf(w_p[s, a]).any():
                    transition[s, a] = gen.dirichlet(np.ones(n_states))
                else:
                    transition[s, a] = _transfer(transition[s, a], w_p[s, a], gen)
        transition /= transition.sum(axis=2, keepdims=True)

    free = np.isinf(w_r)
    bounded = np.where(free, 0.0, w_r) * SHRINK
    reward = mdp.mean_reward + gen.uniform(-1.0, 1.0, w_r.shape) * bounded
    reward = np.where(free, gen.uniform(0.0, 1.0, w_r.shape), reward)
    reward = np.clip(reward, 0.0, 1.0)

    initial = np.array(mdp.initial)
    if perturb_initial:
        initial = _transfer(initial, w_mu, gen)
        initial /= initial.sum()
    return FiniteMdp.with_point_rewards(transition, reward, initial, mdp.horizon)


def _instance(mdp: FiniteMdp, epsilon: float) -> str:
    return f"S={mdp.n_states},A={mdp.n_actions},H={mdp.horizon},eps={epsilon:g}"


def check_perturbation_lower(
    mdp: FiniteMdp, estimate: FiniteMdp, policy: Policy, epsilon: float
) -> CheckReport:
    """m̄ >= 1 的行满足扰动条件时 V_{M̂} >= V_M - eps"""
    widths = episodic_widths(mdp, policy, epsilon)
    hypothesis_ok = _check_epsilon(epsilon) and within_widths(mdp, estimate, widths)
    value = finite_horizon_value(mdp, policy)
    value_hat = finite_horizon_value(estimate, policy)
    return make_report(
        "perturbation_lower_bound",
        _instance(mdp, epsilon),
        hypothesis_ok,
        value - epsilon,
        value_hat,
    )


def check_perturbation_upper(
    mdp: FiniteMdp, estimate: FiniteMdp, policy: Policy, epsilon: float
) -> CheckReport:
    """P 与 mu 相同、奖励满足扰动条件时 V_{M̂} <= V_M + eps"""
    _, w_r, _ = episodic_widths(mdp, policy, epsilon)
    same_dynamics = np.array_equal(
        estimate.transition, mdp.transition
    ) and np.array_equal(estimate.initial, mdp.initial)
    reward_gap = np.abs(estimate.mean_reward - mdp.mean_reward)
    rewards_ok = bool(np.all(reward_gap <= w_r + HYPOTHESIS_TOL))
    hypothesis_ok = _check_epsilon(epsilon) and same_dynamics and rewards_ok
    value = finite_horizon_value(mdp, policy)
    value_hat = finite_horizon_value(estimate, policy)
    return make_report(
        "perturbation_upper_bound",
        _instance(mdp, epsilon),
        hypothesis_ok,
        value_hat,
        value + epsilon,
    )


def check_perturbation_generative(
    mdp: FiniteMdp, estimate: FiniteMdp, policy: Policy, epsilon: float
) -> CheckReport:
    """所有项满足按 H 给出的扰动条件时 |V_{M̂} - V_M| <= eps/2"""
    widths = generative_widths(mdp, epsilon)
    hypothesis_ok = _check_epsilon(epsilon) and within_widths(mdp, estimate, widths)
    value = finite_horizon_value(mdp, policy)
    gap = abs(finite_horizon_value(estimate, policy) - value)
    instance = _instance(mdp, epsilon)
    return make_report(
        "perturbation_gen_model", instance, hypothesis_ok, gap, epsilon / 2.0
    )


def random_policy(mdp: FiniteMdp, gen: np.random.Generator) -> Policy:
    table = gen.integers(mdp.n_actions, size=(mdp.horizon, mdp.n_states))
    return Policy.nonstationary(table)


class PerturbationCheck(CheckBase):
    """扰动引理与初等不等式

    配置项: instances, state_counts, action_counts, max_horizon, epsilon_range,
    reward_cap, mult_add_instances, log_grid
    """

    lemma_ids = (
        "fac_log",
        "mult-add",
        "perturbation_lower_bound",
        "perturbation_upper_bound",
        "perturbation_gen_model",
    )

    def _value_reports(self, stream: RngStream, tag: str) -> List[CheckReport]:
        gen = stream.substream(1).generator
        state_counts = self.param("state_counts", [2])
        action_counts = self.param("action_counts", [2])
        low, high = self.param("epsilon_range", [0.05, 0.5])
        n_states = int(state_counts[int(gen.integers(len(state_counts)))])
        n_actions = int(action_counts[int(gen.integers(len(action_counts)))])
        horizon = int(gen.integers(1, int(self.param("max_horizon", 6)) + 1))
        reward_cap: Optional[float] = self.param("reward_cap", None)
        mdp = random_mdp(
            n_states, n_actions, horizon, stream.substream(0), 0.3, reward_cap
        )
        policy = random_policy(mdp, gen)
        epsilon = float(gen.uniform(low, high))

        widths = episodic_widths(mdp, policy, epsilon)
        lower = perturb_mdp(mdp, widths, gen)
        upper = perturb_mdp(
            mdp, widths, gen, perturb_transition=False, perturb_initial=False
        )
        generative = perturb_mdp(mdp, generative_widths(mdp, epsilon), gen)
        reports = [
            check_perturbation_lower(mdp, lower, policy, epsilon),
            check_perturbation_upper(mdp, upper, policy, epsilon),
            check_perturbation_generative(mdp, generative, policy, epsilon),
        ]
        return [replace(r, instance_id=f"{tag}:{r.instance_id}") for r in reports]

    def run(self, rng: RngStream) -> List[CheckReport]:
        reports = check_log_facts(int(self.param("log_grid", 10_000)))

        gen = rng.substream(0).generator
        for i in range(int(self.param("mult_add_instances", 1000))):
            report = check_mult_add(**random_mult_add_instance(gen))
            instance_id = f"mult-{i}:{report.instance_id}"
            reports.append(replace(report, instance_id=instance_id))

        for i in range(int(self.param("instances", 100))):
            reports.extend(self._value_reports(rng.substream(1, i), f"mdp-{i}"))
        return reports
