import math
import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from horizon_rl.empirical_model import EstimatedModel, IntervalModelSet
from horizon_rl.errors import BudgetExceededError, ConfigError, InvariantViolationError
from horizon_rl.exact_oracle import finite_horizon_value, optimal_nonstationary
from horizon_rl.instances import random_dense, random_mdp, twostate_exit
from horizon_rl.mdp_core import Policy
from horizon_rl.planner import (
    DIAGNOSTIC_COLUMNS,
    best_case_row,
    certificate,
    corner_model_value,
    make_parameters,
    optimistic_plan,
    pessimistic_plan,
    pessimistic_policy_value,
    plan_empirical,
    row_vertices,
    run_generative_pipeline,
    run_pessimistic_pipeline,
    scaled_count,
    theoretical_parameters,
    worst_case_row,
)
from horizon_rl.sim_env import EpisodicEnv, RngStream
from horizon_rl.verify.planner_check import random_interval_set


class TestRowProblem(unittest.TestCase):
    """单行的盒约束线性规划"""

    def test_worst_case_row(self):
        center, widths, values = [0.5, 0.5], [0.2, 0.2], [1.0, 0.0]
        np.testing.assert_allclose(worst_case_row(center, widths, values), [0.3, 0.7])
        np.testing.assert_allclose(best_case_row(center, widths, values), [0.7, 0.3])

    def test_full_width_is_point_mass(self):
        """全零中心、宽度1：点质量落在价值最小的状态"""
        q = worst_case_row(np.zeros(3), np.ones(3), [2.0, 0.0, 1.0])
        np.testing.assert_allclose(q, [0.0, 1.0, 0.0])

    def test_ties_fill_lower_index_first(self):
        q = worst_case_row(np.zeros(2), np.ones(2), [0.0, 0.0])
        np.testing.assert_allclose(q, [1.0, 0.0])

    def test_vertices(self):
        vertices = row_vertices(np.array([0.3, 0.3]), np.array([0.7, 0.7]))
        np.testing.assert_allclose(vertices, [[0.3, 0.7], [0.7, 0.3]])
        with self.assertRaises(InvariantViolationError):
            row_vertices(np.array([0.6, 0.6]), np.array([0.7, 0.7]))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 5))
    def test_greedy_matches_vertices(self, seed, size):
        """贪心解的目标值等于顶点上的最小值"""
        gen = np.random.default_rng(seed)
        center = gen.dirichlet(np.ones(size))
        widths = gen.uniform(0.0, 0.5, size)
        values = gen.normal(size=size)
        q = worst_case_row(center, widths, values)
        lo, hi = np.clip(center - widths, 0, 1), np.clip(center + widths, 0, 1)
        self.assertAlmostEqual(q.sum(), 1.0, places=12)
        self.assertTrue(np.all(q >= lo - 1e-12) and np.all(q <= hi + 1e-12))
        best = float((row_vertices(lo, hi) @ values).min())
        self.assertAlmostEqual(float(q @ values), best, places=9)


class TestRobustPlanning(unittest.TestCase):
    """区间集合上的鲁棒逆向归纳"""

    def test_exact_set_recovers_optimum(self):
        mdp = random_dense(3, 2, 5, 6)
        _, v_star = optimal_nonstationary(mdp)
        exact = IntervalModelSet.exact(mdp)
        policy, value = pessimistic_plan(exact)
        self.assertAlmostEqual(value, v_star, places=12)
        self.assertAlmostEqual(optimistic_plan(exact)[1], v_star, places=12)
        self.assertAlmostEqual(finite_horizon_value(mdp, policy), v_star, places=12)

    def test_pessimistic_below_truth_and_corners(self):
        """集合包含真实模型时：悲观价值 <= 顶点最小值 <= 真实价值"""
        for i in range(10):
            mdp = random_mdp(2, 2, 3, RngStream(i), 0.3, 1.0)
            model_set = random_interval_set(mdp, np.random.default_rng(i))
            table = np.random.default_rng(100 + i).integers(2, size=(3, 2))
            policy = Policy.nonstationary(table)
            lower = pessimistic_policy_value(policy, model_set)
            corner = corner_model_value(policy, model_set)
            self.assertLessEqual(lower, corner + 1e-12)
            self.assertLessEqual(corner, finite_horizon_value(mdp, policy) + 1e-12)
            _, low_plan = pessimistic_plan(model_set)
            _, high_plan = optimistic_plan(model_set)
            self.assertLessEqual(low_plan, high_plan + 1e-12)

    def test_unvisited_row_is_adversarial(self):
        """未访问的行宽度为1，对手把质量放到价值最低的状态"""
        center = EstimatedModel(
            np.array([[[1.0, 0.0], [0.0, 0.0]], [[0.0, 1.0], [0.0, 1.0]]]),
            np.array([[0.0, 0.5], [0.0, 0.0]]),
            np.array([1.0, 0.0]),
            np.array([[5, 0], [5, 5]]),
            2,
            "truncated-episodic",
        )
        widths = np.zeros((2, 2, 2))
        widths[0, 1] = 1.0
        model_set = IntervalModelSet(center, widths, np.zeros(2))
        _, value = pessimistic_plan(model_set)
        self.assertAlmostEqual(value, 0.5)

    def test_plan_empirical_rejects_truncated(self):
        center = EstimatedModel(
            np.array([[[1.0]]]),
            np.zeros((1, 1)),
            np.ones(1),
            np.ones((1, 1)),
            2,
            "truncated-episodic",
        )
        with self.assertRaises(InvariantViolationError):
            plan_empirical(center)

    def test_certificate_nonnegative(self):
        mdp = random_dense(2, 2, 3, 4)
        model_set = IntervalModelSet.exact(mdp)
        policy, _ = pessimistic_plan(model_set)
        epsilon_hat, upper, lower = certificate(model_set, policy)
        self.assertAlmostEqual(epsilon_hat, 0.0, places=12)
        self.assertAlmostEqual(upper, lower, places=12)


class TestParameters(unittest.TestCase):
    """采样参数预设"""

    def test_desk_preset(self):
        params = make_parameters(2, 2, 8, 0.5, 0.25)
        self.assertEqual(params.epsilon_est, 0.5)
        self.assertEqual(params.n_est, math.ceil(300 * math.log(96) / 0.5))
        self.assertEqual(params.n_collect, math.ceil(16 / 0.5 * math.log(48)))
        # |S|^5·|A|^3·H/eps^3 = 32·8·8·8
        self.assertEqual(params.n_generative, 16384)

    def test_desk_generative_keeps_horizon_and_epsilon_dependence(self):
        """desk 的 N_gen 与理论公式只差常数 2^29：正比于 H/eps^3"""
        base = make_parameters(2, 2, 8, 0.5, 0.25).n_generative
        self.assertEqual(make_parameters(2, 2, 512, 0.5, 0.25).n_generative, 64 * base)
        self.assertEqual(make_parameters(2, 2, 8, 0.25, 0.25).n_generative, 8 * base)
        theory = theoretical_parameters(2, 2, 8, 0.5, 0.25)
        self.assertAlmostEqual(
            math.log10(base), theory.log10_n_generative - 29 * math.log10(2.0)
        )

    def test_scale_multiplies_counts(self):
        params = make_parameters(2, 2, 8, 0.5, 0.25, scale=0.5)
        self.assertEqual(params.n_generative, 8192)
        self.assertEqual(params.n_est, math.ceil(0.5 * 300 * math.log(96) / 0.5))

    def test_overrides(self):
        params = make_parameters(
            2, 2, 8, 0.5, 0.25, epsilon_est=0.25, n_est=3, n_collect=4, n_generative=5
        )
        counts = (params.n_est, params.n_collect, params.n_generative)
        self.assertEqual((params.epsilon_est,) + counts, (0.25, 3, 4, 5))

    def test_desk_epsilon_est_override(self):
        params = make_parameters(2, 2, 8, 0.5, 0.25, epsilon_est=0.25)
        self.assertEqual(params.n_est, math.ceil(300 * math.log(96) / 0.25))
        self.assertEqual(params.n_collect, math.ceil(16 / 0.25 * math.log(48)))

    def test_theory_preset_is_huge(self):
        params = make_parameters(2, 2, 8, 0.5, 0.25, preset="theory")
        self.assertGreater(params.n_collect, 1e20)
        self.assertLess(params.epsilon_est, 1e-6)
        self.assertEqual(scaled_count(400.0, 1.0), math.inf)
        self.assertEqual(scaled_count(-3.0, 1.0), 1.0)

    def test_theory_n_est_follows_epsilon_est_override(self):
        params = make_parameters(2, 2, 8, 0.5, 0.25, preset="theory", epsilon_est=0.5)
        self.assertEqual(params.epsilon_est, 0.5)
        self.assertEqual(params.n_est, math.ceil(300 * math.log(96) / 0.5))

    def test_invalid(self):
        for kwargs in (
            {"epsilon": 0.0},
            {"delta": 1.5},
            {"scale": 0.0},
            {"preset": "fast"},
            {"n_est": 0},
            {"epsilon_est": 0.0},
        ):
            arguments = dict(epsilon=0.5, delta=0.25)
            arguments.update(kwargs)
            with self.subTest(kwargs=kwargs):
                with self.assertRaises(ConfigError):
                    make_parameters(2, 2, 8, **arguments)


class TestPipelines(unittest.TestCase):
    """端到端学习流程"""

    def test_generative_deterministic_instance(self):
        """确定性转移下估计模型即真实模型，返回最优策略"""
        mdp = twostate_exit(4)
        policy, diagnostics = run_generative_pipeline(
            mdp, 0.5, 0.25, 1.0, RngStream(0), n_generative=50
        )
        value = finite_horizon_value(mdp, policy)
        self.assertAlmostEqual(value, 2.0 - 1.0 / 4, places=12)
        self.assertEqual(diagnostics.queries, 250)
        self.assertAlmostEqual(diagnostics.batches, 62.5)
        self.assertEqual(diagnostics.full_batches, 63)

        row = diagnostics.as_row()
        self.assertEqual(list(row), DIAGNOSTIC_COLUMNS)
        self.assertEqual(row["n_generative"], 50)
        self.assertEqual(row["full_batches"], 63)
        self.assertAlmostEqual(row["planned_value"], value, places=12)
        self.assertIsNone(row["n_collect"])
        self.assertIsNone(row["log10_theory_n_collect"])

    def test_pessimistic_episode_accounting(self):
        mdp = twostate_exit(3)
        env = EpisodicEnv(mdp)
        policy, diagnostics = run_pessimistic_pipeline(
            env, 0.5, 0.25, 1.0, RngStream(0), n_est=2, n_collect=2
        )
        self.assertEqual(env.episodes, (2 + 2) * 64)
        self.assertEqual(diagnostics.episodes, env.episodes)
        self.assertIsInstance(diagnostics.contains_true_model, bool)
        self.assertGreaterEqual(diagnostics.epsilon_hat, 0.0)
        policy.validate(2, 2, 3)

        row = diagnostics.as_row()
        self.assertEqual((row["n_est"], row["n_collect"]), (2, 2))
        self.assertEqual(row["epsilon_hat"], diagnostics.epsilon_hat)
        self.assertGreaterEqual(row["optimistic_value"], row["pessimistic_value"])
        self.assertIsNone(row["n_generative"])

        env = EpisodicEnv(mdp)
        _, diagnostics = run_pessimistic_pipeline(
            env,
            0.5,
            0.25,
            1.0,
            RngStream(0),
            reuse_phase_samples=True,
            n_est=2,
            n_collect=2,
        )
        self.assertEqual(env.episodes, 2 * 64)
        self.assertTrue(diagnostics.reuse_phase_samples)
        self.assertIsNone(diagnostics.as_row()["n_est"])

    def test_pessimistic_budget(self):
        env = EpisodicEnv(twostate_exit(3), budget=100)
        with self.assertRaises(BudgetExceededError):
            run_pessimistic_pipeline(
                env, 0.5, 0.25, 1.0, RngStream(0), n_est=2, n_collect=2
            )
        self.assertEqual(env.episodes, 0)
        env = EpisodicEnv(twostate_exit(3))
        with self.assertRaises(BudgetExceededError):
            run_pessimistic_pipeline(
                env, 0.5, 0.25, 1.0, RngStream(0), preset="theory"
            )

    def test_generative_budget(self):
        with self.assertRaises(BudgetExceededError):
            run_generative_pipeline(
                twostate_exit(4),
                0.5,
                0.25,
                1.0,
                RngStream(0),
                budget=100,
                n_generative=50,
            )

    def test_generative_desk_budget_at_long_horizon(self):
        """H=512 时 desk 的查询数 5·2^20 仍在默认预算内"""
        params = make_parameters(2, 2, 512, 0.5, 0.25)
        self.assertEqual((2 * 2 + 1) * params.n_generative, 5 * 2**20)
        self.assertLessEqual((2 * 2 + 1) * params.n_generative, 1e7)


if __name__ == '__main__':
    unittest.main(verbosity=2)
