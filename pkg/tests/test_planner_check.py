import unittest

import numpy as np

from horizon_rl.empirical_model import IntervalModelSet
from horizon_rl.instances import random_dense, random_mdp
from horizon_rl.mdp_core import Policy
from horizon_rl.sim_env import RngStream
from horizon_rl.verify.planner_check import (
    PlannerCheck,
    check_robust_plan_enumeration,
    check_robust_vs_corners,
    check_row_lp,
    check_width_monotone,
    check_zero_width_collapse,
    linprog_row,
    random_interval_set,
    random_row,
)


class TestRowLp(unittest.TestCase):
    """行内线性规划与 scipy 的比较"""

    def test_linprog_row(self):
        lo, hi = np.array([0.3, 0.3]), np.array([0.7, 0.7])
        self.assertAlmostEqual(linprog_row(lo, hi, np.array([1.0, 0.0])), 0.3)

    def test_random_rows(self):
        gen = np.random.default_rng(7)
        for size in (2, 3, 5):
            reports = check_row_lp(*random_row(gen, size))
            lemma_ids = [r.lemma_id for r in reports]
            self.assertEqual(
                lemma_ids, ["planner:row_lp_vertices", "planner:row_lp_linprog"]
            )
            self.assertTrue(all(r.passed for r in reports))


class TestPlannerChecks(unittest.TestCase):
    """鲁棒规划器的各项检验"""

    def setUp(self):
        self.mdp = random_mdp(2, 2, 2, RngStream(1), 0.3, 1.0)
        self.model_set = random_interval_set(self.mdp, np.random.default_rng(1))
        self.policy = Policy.nonstationary([[0, 1], [1, 0]])

    def test_zero_width(self):
        mdp = random_dense(2, 2, 3, 3)
        report = check_zero_width_collapse(mdp, Policy.stationary([1, 0]))
        self.assertTrue(report.passed)
        self.assertLessEqual(report.lhs, 1e-12)

    def test_width_monotone(self):
        report = check_width_monotone(self.model_set, self.policy, 2.0)
        self.assertTrue(report.hypothesis_ok)
        self.assertTrue(report.passed)
        shrunk = check_width_monotone(self.model_set, self.policy, 0.5)
        self.assertFalse(shrunk.hypothesis_ok)

    def test_enumeration(self):
        report = check_robust_plan_enumeration(self.model_set)
        self.assertIn("policies=16", report.instance_id)
        self.assertTrue(report.passed)

    def test_corners(self):
        report = check_robust_vs_corners(self.model_set, self.policy, self.mdp)
        self.assertTrue(report.passed)
        exact = IntervalModelSet.exact(self.mdp)
        report = check_robust_vs_corners(exact, self.policy)
        self.assertAlmostEqual(report.lhs, report.rhs, places=12)


class TestPlannerCheck(unittest.TestCase):

    def test_no_failures(self):
        check = PlannerCheck()
        check.config = {"instances": 5, "max_horizon": 3, "row_instances": 20}
        reports = check.run(RngStream(0))
        self.assertEqual(len(reports), 5 * 4 + 20 * 2)
        self.assertEqual({r.lemma_id for r in reports}, set(PlannerCheck.lemma_ids))
        self.assertEqual([r for r in reports if r.failed], [])


if __name__ == '__main__':
    unittest.main(verbosity=2)
