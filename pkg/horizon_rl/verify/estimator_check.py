"""
采样调度与截断估计的检验

Q^st 由 simulate_schedule_counts 的蒙特卡洛样本给出。比较分位数区间时，
两端各放宽 3 个标准误，避免蒙特卡洛误差造成的误报。
"""
from __future__ import annotations

import math
from dataclasses import replace
from typing import List, Optional

import numpy as np

from horizon_rl.collector import (
    SampleCollector,
    monte_carlo_quantiles,
    simulate_schedule_counts,
)
from horizon_rl.empirical_model import (
    build_truncated_model,
    confidence_widths,
    contains,
)
from horizon_rl.instances import resolve_mdp
from horizon_rl.mdp_core import FiniteMdp
from horizon_rl.planner import PipelineParameters, make_parameters
from horizon_rl.settings import SETTINGS
from horizon_rl.sim_env import EpisodicEnv, RngStream
from horizon_rl.verify.checks_runner import (
    CheckBase,
    CheckReport,
    binomial_limit,
    divide_power,
    make_report,
)
from horizon_rl.verify.stationary_check import policy_quantile_bound


def _shifted(epsilon: float, stderr: float, sign: float) -> float:
    return min(max(epsilon + sign * 3.0 * stderr, 1e-12), 1.0)


def schedule_quantile(
    counts: np.ndarray, epsilon: float, sign: float = 0.0
) -> np.ndarray:
    """蒙特卡洛 Q^st_eps，sign = +1/-1 时把 eps 向上/向下移 3 个标准误"""
    n_samples = counts.shape[0]
    stderr = math.sqrt(epsilon * (1.0 - epsilon) / n_samples)
    return monte_carlo_quantiles(counts, _shifted(epsilon, stderr, sign)).values


def _shape(mdp: FiniteMdp) -> str:
    return f"S={mdp.n_states},A={mdp.n_actions},H={mdp.horizon}"


def coverage_lists(
    n_states: int, n_actions: int, epsilon: float, delta: float
) -> float:
    """覆盖计数成立所需的最少列表数 16/eps·log(3|S||A|/δ)"""
    return 16.0 / epsilon * math.log(3.0 * n_states * n_actions / delta)


def check_quantile_bracket(
    mdp: FiniteMdp,
    epsilon: float,
    delta: float,
    seeds: int,
    rng: RngStream,
    scale: float = 1.0,
    n_lists: Optional[int] = None,
    n_samples: Optional[int] = None,
) -> CheckReport:
    """每个种子独立估计 m̄^st

    统计 Q^st_eps <= m̄^st <= Q^st_{eps/4} 对所有 (s, a) 成立的频率。
    """
    counts = simulate_schedule_counts(mdp, rng.substream(0), n_samples)
    lower = schedule_quantile(counts, epsilon, +1.0)
    upper = schedule_quantile(counts, epsilon / 4.0, -1.0)
    failures = np.zeros(seeds, dtype=bool)
    for i in range(seeds):
        collector = SampleCollector(EpisodicEnv(mdp, budget=math.inf))
        table = collector.estimate_quantiles(
            epsilon, delta, rng.substream(1, i), scale, n_lists
        )
        inside = (lower <= table.values) & (table.values <= upper)
        failures[i] = not bool(np.all(inside))
    return make_report(
        "estimate_quantile",
        f"{_shape(mdp)},eps={epsilon:g},seeds={seeds}",
        0.0 < epsilon <= 1.0 and 0.0 < delta < 1.0,
        float(failures.mean()),
        binomial_limit(delta, seeds),
    )


def check_coverage(
    mdp: FiniteMdp,
    epsilon: float,
    delta: float,
    n_lists: int,
    seeds: int,
    rng: RngStream,
    n_samples: Optional[int] = None,
) -> CheckReport:
    """N 个列表中计数不小于 Q^st_{eps/4} 的列表至少有 N·eps/8 个（对所有 (s, a)）"""
    counts = simulate_schedule_counts(mdp, rng.substream(0), n_samples)
    threshold = schedule_quantile(counts, epsilon / 4.0, +1.0)
    failures = np.zeros(seeds, dtype=bool)
    for i in range(seeds):
        collector = SampleCollector(EpisodicEnv(mdp, budget=math.inf))
        lists = collector.schedule_counts(n_lists, rng.substream(1, i))
        covered = (lists >= threshold[None, :, :]).sum(axis=0)
        failures[i] = bool(np.any(covered < n_lists * epsilon / 8.0))
    hypothesis_ok = (
        0.0 < epsilon <= 1.0
        and 0.0 < delta < 1.0
        and n_lists >= coverage_lists(mdp.n_states, mdp.n_actions, epsilon, delta)
    )
    return make_report(
        "number_exceed_quantile",
        f"{_shape(mdp)},eps={epsilon:g},N={n_lists},seeds={seeds}",
        hypothesis_ok,
        float(failures.mean()),
        binomial_limit(delta, seeds),
    )


def check_confidence_membership(
    mdp: FiniteMdp, parameters: PipelineParameters, seeds: int, rng: RngStream
) -> CheckReport:
    """估计分位数、采样、截断估计与置信区间，统计真实模型不在集合内的频率"""
    n_est, n_collect = int(parameters.n_est), int(parameters.n_collect)
    eps_est, delta = parameters.epsilon_est, parameters.delta
    failures = np.zeros(seeds, dtype=bool)
    for i in range(seeds):
        collector = SampleCollector(EpisodicEnv(mdp, budget=math.inf))
        stream = rng.substream(i)
        table = collector.estimate_quantiles(
            eps_est, delta, stream.substream(0), n_lists=n_est
        )
        dataset = collector.collect_samples(
            n_collect, stream.substream(1), parameters.scale
        )
        model = build_truncated_model(dataset, table)
        model_set = confidence_widths(model, table, n_collect, eps_est, delta)
        failures[i] = not contains(model_set, mdp)
    required = coverage_lists(mdp.n_states, mdp.n_actions, eps_est, delta)
    return make_report(
        "approximation",
        f"{_shape(mdp)},N_est={n_est},N={n_collect},seeds={seeds}",
        n_collect >= required,
        float(failures.mean()),
        binomial_limit(delta, seeds),
    )


def check_stationary_quantile(
    mdp: FiniteMdp,
    epsilon: float,
    rng: RngStream,
    n_samples: Optional[int] = None,
    cap: Optional[int] = None,
) -> List[CheckReport]:
    """每个 (s, a): Q^st_{eps(|S|+1)^{-12(|S|+1)}/1024} >= eps·m_eps/(4096|S|^{12|S|})

    m_eps 通过穷举非平稳策略精确求得；超过枚举上限时用计数增广 DP 的上界。
    百分位极小，蒙特卡洛分位数即样本最大值，不高于真实分位数。
    """
    if cap is None:
        cap = SETTINGS["verify.stationary_quantile_policy_cap"]
    n_states, n_actions = mdp.n_states, mdp.n_actions
    counts = simulate_schedule_counts(mdp, rng, n_samples)
    percentile = divide_power(epsilon, 1024.0, n_states + 1, 12 * (n_states + 1))
    schedule = monte_carlo_quantiles(counts, max(percentile, 1e-300)).values

    reports = []
    for s in range(n_states):
        for a in range(n_actions):
            best, exact = policy_quantile_bound(mdp, (s, a), epsilon, cap)
            lhs = divide_power(epsilon * best, 4096.0, n_states, 12 * n_states)
            tag = "exact" if exact else "upper"
            instance = f"{_shape(mdp)},z={(s, a)},eps={epsilon:g},m={best}({tag})"
            reports.append(
                make_report(
                    "stationary_quantile",
                    instance,
                    0.0 < epsilon <= 1.0,
                    lhs,
                    float(schedule[s, a]),
                )
            )
    return reports


def _tagged(reports: List[CheckReport], tag: str) -> List[CheckReport]:
    return [replace(r, instance_id=f"{tag}:{r.instance_id}") for r in reports]


class EstimatorCheck(CheckBase):
    """分位数区间、覆盖计数、置信集合成员与平稳分位数下界

    配置项: mdps, epsilon, delta, seeds, scale, n_lists, schedule_samples,
    n_est, n_collect, stationary_quantile_mdps, stationary_quantile_epsilon
    """

    lemma_ids = (
        "estimate_quantile",
        "number_exceed_quantile",
        "approximation",
        "stationary_quantile",
    )

    def _mdp_reports(self, mdp: FiniteMdp, stream: RngStream) -> List[CheckReport]:
        epsilon = float(self.param("epsilon", 0.5))
        delta = float(self.param("delta", 0.25))
        seeds = int(self.param("seeds", 20))
        scale = float(self.param("scale", 1.0))
        n_lists: Optional[int] = self.param("n_lists", None)
        n_samples = int(self.param("schedule_samples", 20_000))

        parameters = make_parameters(
            mdp.n_states,
            mdp.n_actions,
            mdp.horizon,
            epsilon,
            delta,
            scale,
            n_est=self.param("n_est", None),
            n_collect=self.param("n_collect", None),
        )
        coverage_n = int(parameters.n_collect)
        return [
            check_quantile_bracket(
                mdp,
                epsilon,
                delta,
                seeds,
                stream.substream(0),
                scale,
                n_lists,
                n_samples,
            ),
            check_coverage(
                mdp, epsilon, delta, coverage_n, seeds, stream.substream(1), n_samples
            ),
            check_confidence_membership(mdp, parameters, seeds, stream.substream(2)),
        ]

    def run(self, rng: RngStream) -> List[CheckReport]:
        reports: List[CheckReport] = []
        for i, source in enumerate(self.param("mdps", [])):
            found = self._mdp_reports(resolve_mdp(source), rng.substream(0, i))
            reports.extend(_tagged(found, source))

        epsilon = float(self.param("stationary_quantile_epsilon", 0.5))
        n_samples = int(self.param("schedule_samples", 20_000))
        for i, source in enumerate(self.param("stationary_quantile_mdps", [])):
            found = check_stationary_quantile(
                resolve_mdp(source), epsilon, rng.substream(1, i), n_samples
            )
            reports.extend(_tagged(found, source))
        return reports
