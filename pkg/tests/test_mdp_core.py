import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from horizon_rl.errors import CapExceededError, InvariantViolationError, PolicyError
from horizon_rl.instances import coinflip, random_dense, twostate_exit
from horizon_rl.mdp_core import (
    FiniteMdp,
    MarkovChain,
    Policy,
    TrajectoryDataset,
    enumerate_stationary_policies,
    episodes_per_list,
    greedy_actions,
    induce_chain,
    nonstationary_policy_tables,
    schedule_length,
    validate_bounded_total_reward,
)


def two_state_transition():
    transition = np.zeros((2, 2, 2))
    transition[:, :, 0] = 0.25
    transition[:, :, 1] = 0.75
    return transition


class TestFiniteMdp(unittest.TestCase):
    """FiniteMdp 构造与校验"""

    def test_point_rewards(self):
        """确定奖励的均值、二阶矩与最大支撑点"""
        reward = np.array([[0.1, 0.2], [0.3, 0.4]])
        transition = two_state_transition()
        mdp = FiniteMdp.with_point_rewards(transition, reward, [1.0, 0.0], 3)
        self.assertEqual((mdp.n_states, mdp.n_actions, mdp.horizon), (2, 2, 3))
        np.testing.assert_allclose(mdp.mean_reward, reward)
        np.testing.assert_allclose(mdp.reward_second_moment, reward**2)
        np.testing.assert_allclose(mdp.max_reward, reward)

    def test_reward_lists(self):
        """离散奖励分布：均值与正概率支撑点"""
        rewards = [
            [[(0.0, 0.5), (1.0, 0.5)], [(0.5, 1.0)]],
            [[], [(0.2, 0.25), (0.6, 0.75)]],
        ]
        transition = two_state_transition()
        mdp = FiniteMdp.from_reward_lists(transition, rewards, [0.5, 0.5], 2)
        self.assertAlmostEqual(mdp.mean_reward[0, 0], 0.5)
        self.assertAlmostEqual(mdp.mean_reward[1, 0], 0.0)
        self.assertAlmostEqual(mdp.mean_reward[1, 1], 0.5)
        self.assertAlmostEqual(mdp.max_reward[0, 1], 0.5)
        self.assertEqual(mdp.reward_distribution(0, 1), [(0.5, 1.0)])

    def test_transition_row_must_sum_to_one(self):
        """转移行概率和不为1"""
        transition = two_state_transition()
        transition[1, 0] = [0.5, 0.6]
        with self.assertRaises(InvariantViolationError) as ctx:
            FiniteMdp.with_point_rewards(transition, np.zeros((2, 2)), [1.0, 0.0], 2)
        self.assertIn("transition[1,0]", str(ctx.exception))

    def test_reward_out_of_range(self):
        """奖励支撑点超出 [0,1]"""
        with self.assertRaises(InvariantViolationError):
            FiniteMdp.with_point_rewards(
                two_state_transition(), np.full((2, 2), 1.5), [1.0, 0.0], 2
            )

    def test_bad_initial_and_horizon(self):
        """初始分布长度错误、horizon 非正"""
        with self.assertRaises(InvariantViolationError):
            FiniteMdp.with_point_rewards(
                two_state_transition(), np.zeros((2, 2)), [1.0], 2
            )
        with self.assertRaises(InvariantViolationError):
            FiniteMdp.with_point_rewards(
                two_state_transition(), np.zeros((2, 2)), [1.0, 0.0], 0
            )

    def test_arrays_are_read_only(self):
        """构造后的数组不可写"""
        mdp = coinflip(4)
        with self.assertRaises(ValueError):
            mdp.transition[0, 0, 0] = 1.0

    def test_with_horizon(self):
        mdp = coinflip(4).with_horizon(9)
        self.assertEqual(mdp.horizon, 9)

    def test_bounded_total_reward_flag(self):
        """声明总奖励有界但实际不满足时构造失败"""
        mdp = twostate_exit(4)
        with self.assertRaises(InvariantViolationError):
            mdp.replace(assume_bounded_total_reward=True)


class TestBoundedTotalReward(unittest.TestCase):
    """总奖励有界假设的检查"""

    def test_twostate_exit_violates(self):
        """两状态离开实例：停留 H-1 步再离开，总奖励 2 - 1/H"""
        horizon = 8
        certificate = validate_bounded_total_reward(twostate_exit(horizon))
        self.assertFalse(certificate.ok)
        self.assertAlmostEqual(certificate.total, 2.0 - 1.0 / horizon, places=12)
        self.assertEqual(certificate.witness.length, horizon)
        total = certificate.witness.total_reward()
        self.assertAlmostEqual(total, certificate.total, places=12)

    def test_small_rewards_satisfy(self):
        """每步奖励不超过 1/H 的实例满足假设"""
        self.assertTrue(validate_bounded_total_reward(random_dense(2, 2, 7, 5)).ok)
        self.assertTrue(validate_bounded_total_reward(coinflip(6)).ok)


class TestPolicy(unittest.TestCase):
    """确定性策略"""

    def test_stationary_table(self):
        policy = Policy.stationary([1, 0])
        self.assertTrue(policy.is_stationary)
        np.testing.assert_array_equal(policy.table(3), [[1, 0]] * 3)
        self.assertEqual(policy.action(2, 0), 1)

    def test_nonstationary_wrong_length(self):
        """非平稳策略步数与 H 不一致"""
        policy = Policy.nonstationary([[0, 1], [1, 0]])
        self.assertFalse(policy.is_stationary)
        with self.assertRaises(PolicyError):
            policy.table(3)
        with self.assertRaises(InvariantViolationError):
            policy.validate(2, 2, horizon=3)

    def test_illegal_action(self):
        with self.assertRaises(InvariantViolationError):
            Policy.stationary([0, 2]).validate(2, 2)

    def test_immutable_and_hashable(self):
        policy = Policy.stationary([0, 1])
        with self.assertRaises(AttributeError):
            policy.actions = np.zeros(2)
        self.assertEqual(policy, Policy.stationary([0, 1]))
        self.assertNotEqual(policy, Policy.nonstationary([[0, 1]]))
        self.assertEqual(len({policy, Policy.stationary([0, 1])}), 1)

    def test_greedy_ties_take_lowest_action(self):
        q_values = np.array([[1.0, 1.0, 0.5], [0.0, 2.0, 2.0]])
        np.testing.assert_array_equal(greedy_actions(q_values), [0, 1])

    def test_induce_chain_requires_stationary(self):
        mdp = twostate_exit(4)
        chain = induce_chain(mdp, Policy.stationary([1, 0]))
        np.testing.assert_allclose(chain.transition, [[0.0, 1.0], [0.0, 1.0]])
        with self.assertRaises(PolicyError):
            induce_chain(mdp, Policy.nonstationary(np.zeros((4, 2), dtype=int)))


class TestEnumeration(unittest.TestCase):
    """策略枚举与上限"""

    def test_stationary_lexicographic(self):
        policies = enumerate_stationary_policies(twostate_exit(4))
        tables = [p.actions.tolist() for p in policies]
        self.assertEqual(tables, [[0, 0], [0, 1], [1, 0], [1, 1]])

    def test_stationary_cap(self):
        with self.assertRaises(CapExceededError) as ctx:
            enumerate_stationary_policies(twostate_exit(4), cap=3)
        self.assertEqual(ctx.exception.required, 4)

    def test_nonstationary_tables(self):
        tables = nonstationary_policy_tables(2, 2, 2)
        self.assertEqual(tables.shape, (16, 2, 2))
        np.testing.assert_array_equal(tables[0], np.zeros((2, 2)))
        np.testing.assert_array_equal(tables[-1], np.ones((2, 2)))
        self.assertEqual(len({t.tobytes() for t in tables}), 16)
        with self.assertRaises(CapExceededError):
            nonstationary_policy_tables(2, 2, 3, cap=63)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(1, 3), st.integers(1, 3))
    def test_stationary_count(self, n_states, n_actions):
        """平稳策略个数为 |A|^|S|"""
        transition = np.full((n_states, n_actions, n_states), 1.0 / n_states)
        initial = np.full(n_states, 1.0 / n_states)
        reward = np.zeros((n_states, n_actions))
        mdp = FiniteMdp.with_point_rewards(transition, reward, initial, 2)
        self.assertEqual(len(enumerate_stationary_policies(mdp)), n_actions**n_states)


class TestChainAndDataset(unittest.TestCase):

    def test_chain_rows(self):
        with self.assertRaises(InvariantViolationError):
            MarkovChain(np.array([[0.5, 0.4], [0.0, 1.0]]), np.array([1.0, 0.0]))

    def test_schedule_length(self):
        self.assertEqual(episodes_per_list(2, 2), 2 * 2 * 2**4)
        self.assertEqual(schedule_length(2, 2, 3), 64 * 3)

    def test_dataset_shape_checked(self):
        """列表长度必须等于调度长度"""
        ok = np.zeros((2, 3))
        dataset = TrajectoryDataset(ok, ok, ok, ok, 1, 1, 3)
        self.assertEqual((dataset.n_lists, dataset.list_length), (2, 3))
        self.assertEqual(dataset.records(0), [(0, 0, 0.0, 0)] * 3)
        bad = np.zeros((2, 4))
        with self.assertRaises(InvariantViolationError):
            TrajectoryDataset(bad, bad, bad, bad, 1, 1, 3)


if __name__ == '__main__':
    unittest.main(verbosity=2)
