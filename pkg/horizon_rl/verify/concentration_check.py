"""
集中不等式的蒙特卡洛检验

每个检验重复 trials 次，统计不等式不成立的频率，
通过条件为频率 <= delta + 3·sqrt(delta(1-delta)/trials)。
分位数等精确量由 exact_oracle 给出。
"""
from __future__ import annotations

import logging
import math
from dataclasses import replace
from typing import List, Optional, Tuple

import numpy as np

from horizon_rl.exact_oracle import exact_quantile, visitation_distribution
from horizon_rl.instances import resolve_mdp
from horizon_rl.mdp_core import FiniteMdp, Policy
from horizon_rl.sim_env import EpisodicEnv, GenerativeSampler, RngStream
from horizon_rl.verify.checks_runner import (
    CheckBase,
    CheckReport,
    binomial_limit,
    make_report,
)

BOUND_TOL = 1e-12
CHUNK_EPISODES = 2**20
THIRD_BOUND_MODES = ("max", "min")

Triple = Tuple[int, int, int]


def episode_counts(
    mdp: FiniteMdp, policy: Policy, triple: Triple, n: int, rng: RngStream
) -> Tuple[np.ndarray, np.ndarray]:
    """n 个回合中 (s, a) 与 (s, a, s') 各自的出现次数，分块运行，每块一个子流"""
    s, a, s_next = triple
    env = EpisodicEnv(mdp, budget=math.inf)
    pair_counts = np.zeros(n, dtype=np.int64)
    triple_counts = np.zeros(n, dtype=np.int64)
    for k, start in enumerate(range(0, n, CHUNK_EPISODES)):
        size = min(CHUNK_EPISODES, n - start)
        batch = env.rollout_batch(policy, size, rng.substream(k))
        hit = (batch.states[:, :-1] == s) & (batch.actions == a)
        pair_counts[start : start + size] = hit.sum(axis=1)
        moved = hit & (batch.states[:, 1:] == s_next)
        triple_counts[start : start + size] = moved.sum(axis=1)
    return pair_counts, triple_counts


def _quantile(
    mdp: FiniteMdp, policy: Policy, pair: Tuple[int, int], epsilon: float
) -> int:
    distribution = visitation_distribution(mdp, policy, pair[0], pair[1])
    return exact_quantile(distribution, epsilon)


def _frequency_report(
    lemma_id: str,
    instance_id: str,
    hypothesis_ok: bool,
    failures: np.ndarray,
    delta: float,
) -> CheckReport:
    limit = binomial_limit(delta, failures.shape[0])
    frequency = float(failures.mean())
    return make_report(lemma_id, instance_id, hypothesis_ok, frequency, limit)


def _valid_delta(delta: float) -> bool:
    return 0.0 < delta < 1.0


def check_visit_upperbound(
    mdp: FiniteMdp,
    policy: Policy,
    triple: Triple,
    delta: float,
    trials: int,
    rng: RngStream,
) -> CheckReport:
    """count(s,a,s') <= (2Q_{δ/2}(count(s,a)) + 4)/δ · P(s'|s,a) 以至少 1-δ 的概率成立"""
    s, a, s_next = triple
    quantile = _quantile(mdp, policy, (s, a), delta / 2.0)
    bound = (2.0 * quantile + 4.0) / delta * mdp.transition[s, a, s_next]
    _, triple_counts = episode_counts(mdp, policy, triple, trials, rng)
    failures = triple_counts > bound + BOUND_TOL
    return _frequency_report(
        "upperbound_on_visits",
        f"z={triple},delta={delta:g},Q={quantile},trials={trials}",
        _valid_delta(delta),
        failures,
        delta,
    )


def check_martingale_concentration(
    mdp: FiniteMdp,
    policy: Policy,
    triple: Triple,
    delta: float,
    trials: int,
    rng: RngStream,
) -> CheckReport:
    """|count(s,a,s') - P·count(s,a)| <= sqrt((4Q_{δ/2} + 8)/δ · P) 以至少 1-δ 的概率成立"""
    s, a, s_next = triple
    prob = mdp.transition[s, a, s_next]
    quantile = _quantile(mdp, policy, (s, a), delta / 2.0)
    bound = math.sqrt((4.0 * quantile + 8.0) / delta * prob)
    pair_counts, triple_counts = episode_counts(mdp, policy, triple, trials, rng)
    failures = np.abs(triple_counts - prob * pair_counts) > bound + BOUND_TOL
    return _frequency_report(
        "martingal_concent",
        f"z={triple},delta={delta:g},Q={quantile},trials={trials}",
        _valid_delta(delta),
        failures,
        delta,
    )


def check_prob_approx_error(
    mdp: FiniteMdp,
    policy: Policy,
    triple: Triple,
    delta: float,
    n_episodes: int,
    trials: int,
    rng: RngStream,
    third_bound: str = "max",
) -> CheckReport:
    """K 个回合的经验转移概率误差

    要求 Kδ >= 64 log(4/δ) 且 Q_{δ/4}(s, a) >= 1。以至少 1-δ 的概率同时有
    count >= KδQ/8，|P̂ - P| <= sqrt(32P/(δ·count))，
    以及 |P̂ - P| <= max(或 min){sqrt(64P̂/(δ²·count)), 64/(δ·count)}。
    """
    if third_bound not in THIRD_BOUND_MODES:
        raise ValueError(f"third_bound 必须是 {THIRD_BOUND_MODES} 之一")
    s, a, s_next = triple
    prob = mdp.transition[s, a, s_next]
    quantile = _quantile(mdp, policy, (s, a), delta / 4.0)
    hypothesis_ok = (
        _valid_delta(delta)
        and n_episodes * delta >= 64.0 * math.log(4.0 / delta)
        and quantile >= 1
    )

    n = n_episodes * trials
    pair_counts, triple_counts = episode_counts(mdp, policy, triple, n, rng)
    counts = pair_counts.reshape(trials, n_episodes).sum(axis=1)
    hits = triple_counts.reshape(trials, n_episodes).sum(axis=1)
    denom = np.maximum(counts, 1).astype(np.float64)
    estimate = hits / denom
    error = np.abs(estimate - prob)

    enough = counts >= n_episodes * delta * quantile / 8.0
    second = error <= np.sqrt(32.0 * prob / (delta * denom)) + BOUND_TOL
    combine = np.maximum if third_bound == "max" else np.minimum
    third_limit = combine(
        np.sqrt(64.0 * estimate / (delta**2 * denom)), 64.0 / (delta * denom)
    )
    third = error <= third_limit + BOUND_TOL
    failures = ~(enough & second & third)
    instance = (
        f"z={triple},delta={delta:g},K={n_episodes},Q={quantile},"
        f"third={third_bound},trials={trials}"
    )
    return _frequency_report(
        "prob_approx_error", instance, hypothesis_ok, failures, delta
    )


def generative_bounds(
    mdp: FiniteMdp, n: int, delta: float
) -> Tuple[np.ndarray, np.ndarray, float]:
    """N 次生成模型抽样下 P̂、R̂、μ̂ 的误差上界"""
    n_states, n_actions = mdp.n_states, mdp.n_actions
    log_p = math.log(6.0 * n_states**2 * n_actions / delta)
    log_r = math.log(6.0 * n_states * n_actions / delta)
    w_p = np.maximum(4.0 * np.sqrt(mdp.transition * log_p / n), 2.0 * log_p / n)
    second = mdp.reward_second_moment
    w_r = np.maximum(4.0 * np.sqrt(second * log_r / n), 2.0 * log_r / n)
    w_mu = math.sqrt(math.log(6.0 * n_states / delta) / n)
    return w_p, w_r, w_mu


def check_generative_approximation(
    mdp: FiniteMdp, n: int, delta: float, trials: int, rng: RngStream
) -> CheckReport:
    """每次试验对每个 (s, a) 抽 N 次、从 mu 抽 N 次，任何一项越界即记为失败"""
    n_states, n_actions = mdp.n_states, mdp.n_actions
    sampler = GenerativeSampler(mdp, budget=math.inf)
    w_p, w_r, w_mu = generative_bounds(mdp, n, delta)
    states = np.arange(n_states)
    failures = np.zeros(trials, dtype=bool)
    for s in range(n_states):
        for a in range(n_actions):
            stream = rng.substream(s * n_actions + a)
            rewards, next_states = sampler.query_batch(s, a, n * trials, stream)
            freq = (next_states.reshape(trials, n)[:, :, None] == states).mean(axis=1)
            mean = rewards.reshape(trials, n).mean(axis=1)
            p_error = np.abs(freq - mdp.transition[s, a])
            failures |= np.any(p_error > w_p[s, a] + BOUND_TOL, axis=1)
            failures |= np.abs(mean - mdp.mean_reward[s, a]) > w_r[s, a] + BOUND_TOL
    starts = sampler.sample_initial(n * trials, rng.substream(n_states * n_actions))
    freq = (starts.reshape(trials, n)[:, :, None] == states).mean(axis=1)
    failures |= np.any(np.abs(freq - mdp.initial) > w_mu + BOUND_TOL, axis=1)
    return _frequency_report(
        "approximation_gen_model",
        f"S={n_states},A={n_actions},N={n},delta={delta:g},trials={trials}",
        _valid_delta(delta),
        failures,
        delta,
    )


class ConcentrationCheck(CheckBase):
    """在命名实例上对每个 (s, a, s') 运行集中不等式检验

    配置项: mdps, deltas, trials, approx_episodes, approx_trials, third_bound,
    generative_n, generative_trials
    """

    lemma_ids = (
        "upperbound_on_visits",
        "martingal_concent",
        "prob_approx_error",
        "approximation_gen_model",
    )

    def _policy(self, mdp: FiniteMdp, rng: RngStream) -> Policy:
        gen = rng.generator
        table = gen.integers(mdp.n_actions, size=(mdp.horizon, mdp.n_states))
        return Policy.nonstationary(table)

    def _triple_reports(
        self,
        mdp: FiniteMdp,
        policy: Policy,
        triple: Triple,
        delta: float,
        base: RngStream,
    ) -> List[CheckReport]:
        trials = self.trials()
        approx_episodes = int(self.param("approx_episodes", 4096))
        approx_trials = int(self.param("approx_trials", 200))
        third_bound = str(self.param("third_bound", "max"))
        reports = [
            check_visit_upperbound(
                mdp, policy, triple, delta, trials, base.substream(0)
            ),
            check_martingale_concentration(
                mdp, policy, triple, delta, trials, base.substream(1)
            ),
        ]
        if approx_trials > 0:
            reports.append(
                check_prob_approx_error(
                    mdp,
                    policy,
                    triple,
                    delta,
                    approx_episodes,
                    approx_trials,
                    base.substream(2),
                    third_bound,
                )
            )
        return reports

    def _mdp_reports(
        self, mdp: FiniteMdp, stream: RngStream, tag: str
    ) -> List[CheckReport]:
        generative_n: Optional[int] = self.param("generative_n", 64)
        generative_trials = int(self.param("generative_trials", 1000))

        policy = self._policy(mdp, stream.substream(0))
        reports: List[CheckReport] = []
        for d, delta in enumerate(self.param("deltas", [0.1, 0.25])):
            k = 0
            for s in range(mdp.n_states):
                for a in range(mdp.n_actions):
                    for s_next in range(mdp.n_states):
                        base = stream.substream(1, d, k)
                        reports.extend(
                            self._triple_reports(
                                mdp, policy, (s, a, s_next), delta, base
                            )
                        )
                        k += 1
            if generative_n:
                reports.append(
                    check_generative_approximation(
                        mdp,
                        int(generative_n),
                        delta,
                        generative_trials,
                        stream.substream(2, d),
                    )
                )
        return [replace(r, instance_id=f"{tag}:{r.instance_id}") for r in reports]

    def run(self, rng: RngStream) -> List[CheckReport]:
        reports: List[CheckReport] = []
        for i, source in enumerate(self.param("mdps", ["coinflip(8)"])):
            mdp = resolve_mdp(source)
            self._log(logging.INFO, f"集中不等式检验: {source}")
            reports.extend(self._mdp_reports(mdp, rng.substream(i), source))
        return reports
