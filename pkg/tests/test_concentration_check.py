import math
import unittest

import numpy as np
import pytest

from horizon_rl.instances import coinflip, twostate_exit
from horizon_rl.mdp_core import Policy
from horizon_rl.sim_env import RngStream
from horizon_rl.verify.checks_runner import binomial_limit
from horizon_rl.verify.concentration_check import (
    ConcentrationCheck,
    check_generative_approximation,
    check_martingale_concentration,
    check_prob_approx_error,
    check_visit_upperbound,
    episode_counts,
    generative_bounds,
)


class TestEpisodeCounts(unittest.TestCase):
    """逐回合计数"""

    def test_deterministic_instance(self):
        """停留4步后离开：(0,0) 出现3次，(0,1,1) 出现1次"""
        mdp = twostate_exit(4)
        policy = Policy.nonstationary([[0, 0], [0, 0], [0, 0], [1, 0]])
        pairs, triples = episode_counts(mdp, policy, (0, 1, 1), 3, RngStream(0))
        np.testing.assert_array_equal(pairs, [1, 1, 1])
        np.testing.assert_array_equal(triples, [1, 1, 1])
        pairs, triples = episode_counts(mdp, policy, (0, 0, 0), 2, RngStream(0))
        np.testing.assert_array_equal(pairs, [3, 3])
        np.testing.assert_array_equal(triples, [3, 3])

    def test_coinflip_mean(self):
        """每步以 1/2 的概率位于状态0"""
        policy = Policy.stationary([0, 0])
        pairs, triples = episode_counts(
            coinflip(8), policy, (0, 0, 1), 4000, RngStream(1)
        )
        self.assertLess(abs(pairs.mean() - 4.0), 0.2)
        self.assertLess(abs(triples.mean() - 2.0), 0.2)


class TestMonteCarloChecks(unittest.TestCase):
    """失败频率不超过 delta + 3 个标准误"""

    def setUp(self):
        self.mdp = coinflip(8)
        self.policy = Policy.stationary([0, 0])

    def test_visit_upperbound(self):
        report = check_visit_upperbound(
            self.mdp, self.policy, (0, 0, 1), 0.1, 500, RngStream(2)
        )
        self.assertTrue(report.hypothesis_ok)
        self.assertEqual(report.rhs, binomial_limit(0.1, 500))
        self.assertTrue(report.passed)

    def test_martingale(self):
        report = check_martingale_concentration(
            self.mdp, self.policy, (1, 0, 0), 0.25, 500, RngStream(3)
        )
        self.assertTrue(report.passed)
        certain = check_martingale_concentration(
            self.mdp, self.policy, (1, 0, 0), 1.0, 10, RngStream(3)
        )
        self.assertFalse(certain.hypothesis_ok)

    def test_prob_approx_error(self):
        report = check_prob_approx_error(
            self.mdp, self.policy, (0, 0, 0), 0.25, 1024, 20, RngStream(4)
        )
        self.assertTrue(report.hypothesis_ok)
        self.assertIn("Q=6", report.instance_id)
        self.assertTrue(report.passed)
        short = check_prob_approx_error(
            self.mdp, self.policy, (0, 0, 0), 0.25, 100, 5, RngStream(4)
        )
        self.assertFalse(short.hypothesis_ok)
        with self.assertRaises(ValueError):
            check_prob_approx_error(
                self.mdp,
                self.policy,
                (0, 0, 0),
                0.25,
                100,
                5,
                RngStream(4),
                third_bound="mean",
            )

    def test_generative_bounds(self):
        w_p, w_r, w_mu = generative_bounds(self.mdp, 64, 0.25)
        log_p = math.log(6.0 * 4 / 0.25)
        expected = max(4 * math.sqrt(0.5 * log_p / 64), 2 * log_p / 64)
        self.assertAlmostEqual(w_p[0, 0, 1], expected)
        self.assertAlmostEqual(w_mu, math.sqrt(math.log(12 / 0.25) / 64))

    def test_generative_approximation(self):
        report = check_generative_approximation(self.mdp, 64, 0.25, 200, RngStream(5))
        self.assertTrue(report.hypothesis_ok)
        self.assertTrue(report.passed)


class TestConcentrationCheck(unittest.TestCase):

    @pytest.mark.slow
    def test_no_failures(self):
        check = ConcentrationCheck()
        check.config = {
            "mdps": ["coinflip(4)"],
            "deltas": [0.25],
            "trials": 500,
            "approx_episodes": 1024,
            "approx_trials": 20,
            "generative_n": 64,
            "generative_trials": 100,
        }
        reports = check.run(RngStream(0))
        self.assertEqual(len(reports), 4 * 3 + 1)
        lemma_ids = {r.lemma_id for r in reports}
        self.assertEqual(lemma_ids, set(ConcentrationCheck.lemma_ids))
        self.assertEqual([r for r in reports if r.failed], [])


if __name__ == '__main__':
    unittest.main(verbosity=2)
