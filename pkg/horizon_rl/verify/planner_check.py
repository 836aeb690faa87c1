"""
悲观规划器的正确性检验：零宽度退化、宽度单调性、鲁棒规划与策略穷举一致、
行内线性规划与顶点枚举及 scipy 线性规划一致。
"""
from __future__ import annotations

from dataclasses import replace
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import linprog

from horizon_rl.empirical_model import EstimatedModel, IntervalModelSet
from horizon_rl.exact_oracle import finite_horizon_value, optimal_nonstationary
from horizon_rl.instances import random_mdp
from horizon_rl.mdp_core import FiniteMdp, Policy, nonstationary_policy_tables
from horizon_rl.planner import (
    corner_model_value,
    interval_bounds,
    optimistic_plan,
    optimistic_policy_value,
    pessimistic_plan,
    pessimistic_policy_value,
    row_vertices,
    worst_case_row,
)
from horizon_rl.sim_env import RngStream
from horizon_rl.verify.checks_runner import (
    CheckBase,
    CheckReport,
    leq,
    make_report,
)

COLLAPSE_TOL = 1e-12
MATCH_TOL = 1e-9
LINPROG_TOL = 1e-7


def random_interval_set(
    mdp: FiniteMdp, gen: np.random.Generator, max_width: float = 0.3
) -> IntervalModelSet:
    center = EstimatedModel.from_mdp(mdp)
    widths = gen.uniform(0.0, max_width, center.transition.shape)
    initial_width = gen.uniform(0.0, max_width, center.n_states)
    return IntervalModelSet(center, widths, initial_width)


def check_zero_width_collapse(mdp: FiniteMdp, policy: Policy) -> CheckReport:
    """宽度为0时悲观/乐观规划都等于真实模型上的最优值，给定策略的悲观价值等于真实价值"""
    model_set = IntervalModelSet.exact(mdp)
    _, v_star = optimal_nonstationary(mdp)
    value = finite_horizon_value(mdp, policy)
    gaps = [
        abs(pessimistic_plan(model_set)[1] - v_star),
        abs(optimistic_plan(model_set)[1] - v_star),
        abs(pessimistic_policy_value(policy, model_set) - value),
        abs(optimistic_policy_value(policy, model_set) - value),
    ]
    worst = max(gaps)
    return make_report(
        "planner:zero_width",
        f"S={mdp.n_states},A={mdp.n_actions},H={mdp.horizon}",
        True,
        worst,
        COLLAPSE_TOL,
        holds=worst <= COLLAPSE_TOL,
    )


def check_width_monotone(
    model_set: IntervalModelSet, policy: Policy, factor: float
) -> CheckReport:
    """放大宽度后悲观价值不增、乐观价值不减；lhs/rhs 为放大前后的悲观价值"""
    wider = model_set.scaled(factor)
    narrow_low = pessimistic_policy_value(policy, model_set)
    wide_low = pessimistic_policy_value(policy, wider)
    narrow_high = optimistic_policy_value(policy, model_set)
    wide_high = optimistic_policy_value(policy, wider)
    holds = (
        leq(wide_low, narrow_low)
        and leq(narrow_high, wide_high)
        and leq(narrow_low, narrow_high)
    )
    return make_report(
        "planner:width_monotone",
        f"S={model_set.n_states},factor={factor:.3g}",
        factor >= 1.0,
        wide_low,
        narrow_low,
        holds=holds,
    )


def check_robust_plan_enumeration(
    model_set: IntervalModelSet, cap: Optional[int] = None
) -> CheckReport:
    """鲁棒逆向归纳的最优值等于逐个策略计算悲观价值后的最大值"""
    n_states, n_actions = model_set.n_states, model_set.n_actions
    horizon = model_set.horizon
    tables = nonstationary_policy_tables(n_states, n_actions, horizon, cap)
    best = max(
        pessimistic_policy_value(Policy.nonstationary(table), model_set)
        for table in tables
    )
    _, planned = pessimistic_plan(model_set)
    gap = abs(planned - best)
    return make_report(
        "planner:robust_dp_enumeration",
        f"S={n_states},A={n_actions},H={horizon},policies={tables.shape[0]}",
        True,
        gap,
        MATCH_TOL,
        holds=gap <= MATCH_TOL,
    )


def check_robust_vs_corners(
    model_set: IntervalModelSet, policy: Policy, truth: Optional[FiniteMdp] = None
) -> CheckReport:
    """时变对手的悲观价值不高于任一时不变顶点模型的最小价值；
    给出集合内的真实模型时，悲观价值也不高于真实价值
    """
    lower = pessimistic_policy_value(policy, model_set)
    corner = corner_model_value(policy, model_set)
    holds = leq(lower, corner)
    if truth is not None:
        holds = holds and leq(lower, finite_horizon_value(truth, policy))
    return make_report(
        "planner:robust_vs_corners",
        f"S={model_set.n_states},H={model_set.horizon}",
        True,
        lower,
        corner,
        holds=holds,
    )


def linprog_row(lo: np.ndarray, hi: np.ndarray, values: np.ndarray) -> float:
    result = linprog(
        values,
        A_eq=np.ones((1, values.shape[0])),
        b_eq=[1.0],
        bounds=list(zip(lo, hi)),
        method="highs",
    )
    if not result.success:
        raise RuntimeError(f"linprog 求解失败: {result.message}")
    return float(result.fun)


def check_row_lp(
    center: np.ndarray, widths: np.ndarray, values: np.ndarray
) -> List[CheckReport]:
    """贪心解与顶点枚举（容差 1e-9）、scipy 线性规划（容差 1e-7）的目标值比较"""
    lo, hi = interval_bounds(center, widths)
    q = worst_case_row(center, widths, values)
    feasible = bool(
        abs(q.sum() - 1.0) <= MATCH_TOL
        and np.all(q >= lo - MATCH_TOL)
        and np.all(q <= hi + MATCH_TOL)
    )
    greedy = float(q @ values)
    vertex = float((row_vertices(lo, hi) @ values).min())
    solver = linprog_row(lo, hi, values)
    instance = f"n={values.shape[0]}"
    vertex_gap = abs(greedy - vertex)
    solver_gap = abs(greedy - solver)
    return [
        make_report(
            "planner:row_lp_vertices",
            instance,
            True,
            vertex_gap,
            MATCH_TOL,
            holds=feasible and vertex_gap <= MATCH_TOL,
        ),
        make_report(
            "planner:row_lp_linprog",
            instance,
            True,
            solver_gap,
            LINPROG_TOL,
            holds=feasible and solver_gap <= LINPROG_TOL,
        ),
    ]


def random_row(
    gen: np.random.Generator, size: int, max_width: float = 0.5
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    center = gen.dirichlet(np.ones(size))
    widths = gen.uniform(0.0, max_width, size)
    values = gen.normal(size=size)
    return center, widths, values


class PlannerCheck(CheckBase):
    """配置项: instances, state_counts, action_counts, max_horizon, max_width,
    row_instances, row_sizes
    """

    lemma_ids = (
        "planner:zero_width",
        "planner:width_monotone",
        "planner:robust_dp_enumeration",
        "planner:robust_vs_corners",
        "planner:row_lp_vertices",
        "planner:row_lp_linprog",
    )

    def _set_reports(self, stream: RngStream, tag: str) -> List[CheckReport]:
        gen = stream.substream(1).generator
        state_counts = self.param("state_counts", [2])
        action_counts = self.param("action_counts", [2])
        n_states = int(state_counts[int(gen.integers(len(state_counts)))])
        n_actions = int(action_counts[int(gen.integers(len(action_counts)))])
        horizon = int(gen.integers(1, int(self.param("max_horizon", 4)) + 1))
        mdp = random_mdp(n_states, n_actions, horizon, stream.substream(0), 0.3, 1.0)
        table = gen.integers(n_actions, size=(horizon, n_states))
        policy = Policy.nonstationary(table)
        max_width = float(self.param("max_width", 0.3))
        model_set = random_interval_set(mdp, gen, max_width)
        factor = float(gen.uniform(1.0, 3.0))
        cap = int(self.param("policy_cap", 10_000))

        reports = [
            check_zero_width_collapse(mdp, policy),
            check_width_monotone(model_set, policy, factor),
            check_robust_plan_enumeration(model_set, cap),
            check_robust_vs_corners(model_set, policy, mdp),
        ]
        return [replace(r, instance_id=f"{tag}:{r.instance_id}") for r in reports]

    def run(self, rng: RngStream) -> List[CheckReport]:
        reports: List[CheckReport] = []
        for i in range(int(self.param("instances", 50))):
            reports.extend(self._set_reports(rng.substream(0, i), f"set-{i}"))

        gen = rng.substream(1).generator
        sizes = self.param("row_sizes", [2, 3, 4, 5])
        for i in range(int(self.param("row_instances", 1000))):
            size = int(sizes[int(gen.integers(len(sizes)))])
            found = check_row_lp(*random_row(gen, size))
            reports.extend(
                replace(r, instance_id=f"row-{i}:{r.instance_id}") for r in found
            )
        return reports
