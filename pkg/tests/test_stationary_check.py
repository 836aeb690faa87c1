import math
import unittest

import numpy as np

from horizon_rl.instances import random_dense, twostate_exit
from horizon_rl.mdp_core import Policy
from horizon_rl.sim_env import RngStream
from horizon_rl.verify.stationary_check import (
    StationaryCheck,
    check_discount_finite,
    check_half_trajectory,
    check_quantile_comparison,
    check_reaching_stationary,
    check_reward_structure,
    check_stationary_near_optimal,
    discount_factor,
    history_quantile,
    point_initial,
    policy_quantile_bound,
    reach_log_constant,
)


class TestTwoStateExit(unittest.TestCase):
    """两状态离开实例上的闭式结果"""

    def setUp(self):
        self.mdp = twostate_exit(16)
        self.stay = Policy.stationary([0, 0])

    def test_constants(self):
        self.assertAlmostEqual(reach_log_constant(2), math.log(2048))
        self.assertAlmostEqual(discount_factor(2, 16), 1 - math.log(2048) / 16)

    def test_discount_finite(self):
        """V_gamma = (1/H)/(1-gamma) = 1/ln(2048)"""
        report = check_discount_finite(self.mdp, self.stay)
        self.assertTrue(report.hypothesis_ok)
        self.assertAlmostEqual(report.lhs, 1 / math.log(2048), places=9)
        self.assertEqual(report.rhs, 2.0)
        self.assertTrue(report.passed)
        self.assertGreater(report.slack, 0.0)
        short = check_discount_finite(twostate_exit(8), self.stay)
        self.assertFalse(short.hypothesis_ok)

    def test_half_trajectory(self):
        report = check_half_trajectory(self.mdp, self.stay)
        self.assertAlmostEqual(report.lhs, 1 / 1024)
        self.assertAlmostEqual(report.rhs, 0.5)
        self.assertTrue(report.passed)
        short = check_half_trajectory(twostate_exit(3), Policy.stationary([0, 0]))
        self.assertFalse(short.hypothesis_ok)

    def test_stationary_near_optimal(self):
        report = check_stationary_near_optimal(self.mdp)
        self.assertTrue(report.hypothesis_ok)
        self.assertAlmostEqual(report.rhs, 1.0)
        self.assertTrue(report.passed)

    def test_reaching_stationary(self):
        report = check_reaching_stationary(self.mdp, (1, 0))
        self.assertAlmostEqual(report.rhs, 1.0)
        self.assertTrue(report.passed)

    def test_reward_structure_hypothesis(self):
        """总奖励超过1，假设不满足"""
        report = check_reward_structure(self.mdp, (0, 1), 1e-9)
        self.assertFalse(report.hypothesis_ok)
        self.assertFalse(report.failed)


class TestQuantiles(unittest.TestCase):
    """访问次数分位数"""

    def test_history_quantile(self):
        mdp = twostate_exit(4)
        self.assertEqual(history_quantile(mdp, (0, 0), 1.0), 4)
        self.assertEqual(history_quantile(mdp, (1, 0), 1.0), 3)
        self.assertEqual(policy_quantile_bound(mdp, (0, 0), 1.0), (4, True))
        self.assertEqual(policy_quantile_bound(mdp, (0, 0), 1.0, cap=100), (4, False))

    def test_quantile_comparison(self):
        report = check_quantile_comparison(twostate_exit(4), (0, 0), 1.0)
        self.assertIn("f=4(exact)", report.instance_id)
        self.assertEqual((report.lhs, report.rhs), (0.0, 2.0))
        self.assertTrue(report.passed)
        self.assertFalse(report.hypothesis_ok)

    def test_point_initial(self):
        mdp = point_initial(random_dense(3, 2, 1, 4), 2)
        np.testing.assert_array_equal(mdp.initial, [0.0, 0.0, 1.0])


class TestRewardStructure(unittest.TestCase):

    def test_bounded_instance(self):
        mdp = random_dense(2, 2, 1, 8)
        for s in range(2):
            for a in range(2):
                report = check_reward_structure(mdp, (s, a), 1e-9)
                self.assertTrue(report.passed)
                self.assertLessEqual(report.lhs, 1 / 8)


class TestStationaryCheck(unittest.TestCase):

    def test_no_failures(self):
        check = StationaryCheck()
        check.config = {"horizon": 16, "instances": 2}
        reports = check.run(RngStream(0))
        self.assertEqual(len(reports), 3 * (5 + 4))
        self.assertEqual({r.lemma_id for r in reports}, set(StationaryCheck.lemma_ids))
        self.assertEqual([r for r in reports if r.failed], [])


if __name__ == '__main__':
    unittest.main(verbosity=2)
