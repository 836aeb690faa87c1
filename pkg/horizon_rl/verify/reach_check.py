"""
马尔可夫链到达概率的比较不等式

p_h(s) 为链在第 h 步位于 s 的概率，由 exact_oracle.reach_profile 精确计算。
"""
from __future__ import annotations

from dataclasses import replace
from typing import Dict, List, Sequence, Tuple

import numpy as np

from horizon_rl.exact_oracle import reach_profile, sequence_probability
from horizon_rl.instances import random_chain
from horizon_rl.mdp_core import MarkovChain
from horizon_rl.sim_env import RngStream
from horizon_rl.verify.checks_runner import (
    CheckBase,
    CheckReport,
    leq,
    make_report,
    times_power,
)


def reduce_sequence(states: Sequence[int], n_states: int) -> List[int]:
    """反复删去第一个重复状态之间的环，直到长度不超过 |S|

    删除 s_i..s_{j-1}（s_i = s_j）后，终点不变且序列概率不减。
    """
    seq = [int(s) for s in states]
    while len(seq) > n_states:
        seen: Dict[int, int] = {}
        for j, s in enumerate(seq):
            if s in seen:
                seq = seq[: seen[s]] + seq[j:]
                break
            seen[s] = j
    return seq


def check_reduction(chain: MarkovChain, states: Sequence[int]) -> CheckReport:
    states = [int(s) for s in states]
    n_states = chain.n_states
    reduced = reduce_sequence(states, n_states)
    lhs = sequence_probability(chain, states)
    rhs = sequence_probability(chain, reduced)
    shape_ok = len(reduced) <= n_states and reduced[-1] == states[-1]
    return make_report(
        "reduction",
        f"T={states}->{reduced}",
        len(states) > n_states,
        lhs,
        rhs,
        holds=leq(lhs, rhs) and shape_ok,
    )


def _sums(
    profile: np.ndarray, s: int, first: Sequence[int], second: Sequence[int]
) -> Tuple[float, float]:
    return float(profile[list(first), s].sum()), float(profile[list(second), s].sum())


def check_mc_main(chain: MarkovChain, s: int, length: int) -> CheckReport:
    """sum_{h<=2L} p_h(s) <= 4|S|^{4|S|} sum_{h<L} p_h(s)，要求 L >= |S|"""
    n_states = chain.n_states
    profile = reach_profile(chain, 2 * length)
    lhs, short = _sums(profile, s, range(2 * length + 1), range(length))
    rhs = times_power(4.0, n_states, 4 * n_states, short)
    instance = f"S={n_states},s={s},L={length}"
    return make_report("mc_main", instance, length >= n_states, lhs, rhs)


def check_sum_expanded(
    chain: MarkovChain, s: int, alpha: int, beta: int
) -> CheckReport:
    """sum_{h<4|S|} p_{βh+α}(s) <= 4|S|^{4|S|} sum_{h<|S|} p_{βh+α}(s)"""
    n_states = chain.n_states
    hypothesis_ok = alpha >= 0 and beta >= 1
    steps = [beta * h + alpha for h in range(4 * n_states)]
    profile = reach_profile(chain, max(steps))
    lhs, short = _sums(profile, s, steps, steps[:n_states])
    rhs = times_power(4.0, n_states, 4 * n_states, short)
    lemma = "sum_unexpanded" if (alpha, beta) == (0, 1) else "sum_expanded"
    instance = f"S={n_states},s={s},alpha={alpha},beta={beta}"
    return make_report(lemma, instance, hypothesis_ok, lhs, rhs)


def check_sum_unexpanded(chain: MarkovChain, s: int) -> CheckReport:
    return check_sum_expanded(chain, s, 0, 1)


def fixed_chains() -> List[Tuple[str, MarkovChain]]:
    """闭式可验证的小链：单状态链与两状态确定性循环"""
    single = MarkovChain(np.ones((1, 1)), np.ones(1))
    cycle = MarkovChain(np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([1.0, 0.0]))
    return [("single", single), ("cycle", cycle)]


class ReachCheck(CheckBase):
    """随机马尔可夫链上的到达概率不等式

    配置项: instances, state_counts, max_length, sparsity, max_alpha, max_beta
    """

    lemma_ids = ("reduction", "mc_main", "sum_unexpanded", "sum_expanded")

    def _chain_reports(
        self, chain: MarkovChain, gen: np.random.Generator, tag: str
    ) -> List[CheckReport]:
        n_states = chain.n_states
        s = int(gen.integers(n_states))
        max_length = max(n_states, int(self.param("max_length", 12)))
        length = int(gen.integers(n_states, max_length + 1))
        alpha = int(gen.integers(0, int(self.param("max_alpha", 4)) + 1))
        beta = int(gen.integers(1, int(self.param("max_beta", 4)) + 1))
        size = int(gen.integers(n_states + 1, 2 * n_states + 3))
        sequence = gen.integers(n_states, size=size)
        reports = [
            check_mc_main(chain, s, length),
            check_sum_unexpanded(chain, s),
            check_sum_expanded(chain, s, alpha, beta),
            check_reduction(chain, sequence),
        ]
        return [replace(r, instance_id=f"{tag}:{r.instance_id}") for r in reports]

    def run(self, rng: RngStream) -> List[CheckReport]:
        reports: List[CheckReport] = []
        if self.param("include_fixed", True):
            for k, (name, chain) in enumerate(fixed_chains()):
                gen = rng.substream(0, k).generator
                reports.extend(self._chain_reports(chain, gen, name))

        state_counts = self.param("state_counts", [2, 3, 4])
        sparsity = float(self.param("sparsity", 0.3))
        for i in range(int(self.param("instances", 100))):
            stream = rng.substream(1, i)
            gen = stream.substream(1).generator
            n_states = int(state_counts[int(gen.integers(len(state_counts)))])
            chain = random_chain(n_states, stream.substream(0), sparsity)
            reports.extend(self._chain_reports(chain, gen, f"chain-{i}"))
        return reports
