import unittest

import numpy as np

from horizon_rl.errors import CapExceededError, InvariantViolationError, PolicyError
from horizon_rl.exact_oracle import (
    best_stationary,
    discounted_value,
    enumerate_trajectories,
    enumerated_value,
    exact_quantile,
    finite_horizon_value,
    max_quantile_over_policies,
    max_reach_probability,
    max_visit_probability,
    optimal_discounted_stationary,
    optimal_nonstationary,
    reach_profile,
    sequence_probability,
    stationary_reach_probability,
    trajectory_probability,
    visitation_distribution,
)
from horizon_rl.instances import chain, coinflip, random_dense, twostate_exit
from horizon_rl.mdp_core import MarkovChain, Policy, enumerate_stationary_policies


class TestValues(unittest.TestCase):
    """有限时域价值与最优策略"""

    def test_twostate_exit_gap(self):
        """非平稳最优 2 - 1/H，最好的平稳策略只有 1"""
        mdp = twostate_exit(16)
        policy, value = optimal_nonstationary(mdp)
        self.assertAlmostEqual(value, 2.0 - 1.0 / 16, places=12)
        self.assertFalse(policy.is_stationary)
        self.assertEqual(policy.action(15, 0), 1)
        self.assertEqual(policy.action(0, 0), 0)
        _, stationary_value = best_stationary(mdp)
        self.assertAlmostEqual(stationary_value, 1.0, places=12)

    def test_named_instances(self):
        _, value = optimal_nonstationary(chain(3, 4))
        self.assertAlmostEqual(value, 0.5, places=12)
        _, value = optimal_nonstationary(coinflip(10))
        self.assertAlmostEqual(value, 0.5, places=12)

    def test_backward_induction_matches_enumeration(self):
        """逆向归纳的价值等于按轨迹枚举求和"""
        mdp = random_dense(2, 2, 7, 4)
        for policy in enumerate_stationary_policies(mdp):
            expected = enumerated_value(mdp, policy)
            value = finite_horizon_value(mdp, policy)
            self.assertAlmostEqual(value, expected, places=12)
        optimal, value = optimal_nonstationary(mdp)
        self.assertAlmostEqual(enumerated_value(mdp, optimal), value, places=12)

    def test_trajectory_probabilities_sum_to_one(self):
        mdp = random_dense(2, 2, 3, 3)
        policy = Policy.nonstationary([[0, 1], [1, 1], [1, 0]])
        total = sum(prob for _, _, prob in enumerate_trajectories(mdp, policy))
        self.assertAlmostEqual(total, 1.0, places=12)

    def test_trajectory_probability_checks_actions(self):
        mdp = twostate_exit(2)
        policy = Policy.stationary([0, 0])
        prob = trajectory_probability(mdp, policy, [0, 0, 0], [0, 0])
        self.assertAlmostEqual(prob, 1.0)
        self.assertEqual(trajectory_probability(mdp, policy, [0, 1, 1], [0, 0]), 0.0)
        with self.assertRaises(PolicyError):
            trajectory_probability(mdp, policy, [0, 0, 0], [1, 0])
        with self.assertRaises(InvariantViolationError):
            trajectory_probability(mdp, policy, [0, 0], [0])

    def test_trajectory_cap(self):
        with self.assertRaises(CapExceededError):
            list(enumerate_trajectories(coinflip(4), Policy.stationary([0, 0]), cap=8))


class TestDiscounted(unittest.TestCase):
    """平稳策略的折扣价值"""

    def test_single_state(self):
        """单状态、每步 1/H：折扣价值 (1/H)/(1-gamma)"""
        mdp = chain(1, 8)
        value = discounted_value(mdp, Policy.stationary([0]), 0.5)
        self.assertAlmostEqual(value, 2.0 / 8, places=12)

    def test_rejects_nonstationary(self):
        with self.assertRaises(PolicyError):
            discounted_value(coinflip(2), Policy.nonstationary([[0, 0], [0, 0]]), 0.5)
        with self.assertRaises(InvariantViolationError):
            discounted_value(coinflip(2), Policy.stationary([0, 0]), 1.0)

    def test_policy_iteration_matches_enumeration(self):
        mdp = random_dense(3, 2, 11, 5)
        _, enumerated = optimal_discounted_stationary(mdp, 0.9, method="enumerate")
        _, iterated = optimal_discounted_stationary(mdp, 0.9, method="policy_iteration")
        self.assertAlmostEqual(enumerated, iterated, places=9)


class TestReach(unittest.TestCase):
    """马尔可夫链到达概率"""

    def setUp(self):
        transition = np.array([[0.0, 1.0], [1.0, 0.0]])
        self.cycle = MarkovChain(transition, np.array([1.0, 0.0]))

    def test_cycle_profile(self):
        profile = reach_profile(self.cycle, 3)
        np.testing.assert_allclose(profile, [[1, 0], [0, 1], [1, 0], [0, 1]])

    def test_sequence_probability(self):
        self.assertEqual(sequence_probability(self.cycle, [0, 1, 0]), 1.0)
        self.assertEqual(sequence_probability(self.cycle, [0, 0]), 0.0)
        self.assertEqual(sequence_probability(self.cycle, [1]), 0.0)

    def test_max_reach(self):
        """最大到达概率不小于任一平稳策略的到达概率，且等于 k=1 的计数增广 DP"""
        mdp = random_dense(3, 2, 5, 4)
        for pair in [(0, 0), (1, 1), (2, 0)]:
            best = max_reach_probability(mdp, pair)
            self.assertAlmostEqual(max_visit_probability(mdp, pair, 1), best, places=12)
            for policy in enumerate_stationary_policies(mdp):
                reach = stationary_reach_probability(mdp, policy, pair)
                self.assertLessEqual(reach, best + 1e-12)

    def test_twostate_reach(self):
        mdp = twostate_exit(4)
        self.assertAlmostEqual(max_reach_probability(mdp, (1, 0)), 1.0)
        stay = Policy.stationary([0, 0])
        self.assertAlmostEqual(stationary_reach_probability(mdp, stay, (1, 0)), 0.0)


class TestVisitation(unittest.TestCase):
    """访问次数分布与精确分位数"""

    def test_coinflip_distribution(self):
        """两步抛硬币：状态1出现次数服从 Binomial(2, 1/2)"""
        mdp = coinflip(2)
        dist = visitation_distribution(mdp, Policy.stationary([0, 0]), 1, 0)
        np.testing.assert_allclose(dist.probs, [0.25, 0.5, 0.25])
        self.assertAlmostEqual(dist.tail(1), 0.75)
        self.assertEqual(dist.tail(0), 1.0)
        self.assertEqual(exact_quantile(dist, 0.5), 1)
        self.assertEqual(exact_quantile(dist, 0.25), 2)
        self.assertEqual(exact_quantile(dist, 1.0), 0)

    def test_quantile_epsilon_range(self):
        dist = visitation_distribution(coinflip(2), Policy.stationary([0, 0]), 1, 0)
        with self.assertRaises(InvariantViolationError):
            exact_quantile(dist, 0.0)
        with self.assertRaises(InvariantViolationError):
            exact_quantile(dist, 1.5)

    def test_max_quantile_stays(self):
        """一直停留的策略让 (0, 0) 恰好被访问 H 次"""
        best, policy = max_quantile_over_policies(twostate_exit(4), 1.0, (0, 0))
        self.assertEqual(best, 4)
        np.testing.assert_array_equal(policy.table(4)[:, 0], [0, 0, 0, 0])

    def test_visit_probability_upper_bounds_policies(self):
        """计数增广 DP 不小于任一非平稳策略的尾概率"""
        mdp = random_dense(2, 2, 9, 3)
        pair = (1, 0)
        for k in range(1, 4):
            bound = max_visit_probability(mdp, pair, k)
            for policy in enumerate_stationary_policies(mdp):
                tail = visitation_distribution(mdp, policy, *pair).tail(k)
                self.assertLessEqual(tail, bound + 1e-12)

    def test_policy_cap(self):
        with self.assertRaises(CapExceededError):
            max_quantile_over_policies(twostate_exit(4), 1.0, (0, 0), cap=100)


if __name__ == '__main__':
    unittest.main(verbosity=2)
