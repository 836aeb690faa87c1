import math
import unittest

import numpy as np

from horizon_rl.collector import QuantileTable
from horizon_rl.empirical_model import (
    EstimatedModel,
    IntervalModelSet,
    build_generative_model,
    build_truncated_model,
    confidence_widths,
    contains,
    truncation_mask,
)
from horizon_rl.errors import DimensionMismatchError, InvariantViolationError
from horizon_rl.instances import random_dense, twostate_exit
from horizon_rl.mdp_core import TrajectoryDataset
from horizon_rl.sim_env import GenerativeSampler, RngStream


def one_state_dataset():
    """S=A=1、H=3 的两个列表"""
    zeros = np.zeros((2, 3))
    rewards = np.array([[0.2, 0.4, 0.6], [0.8, 1.0, 1.0]])
    return TrajectoryDataset(zeros, zeros, rewards, zeros, 1, 1, 3)


def quantile_table(values, horizon=3):
    return QuantileTable(np.array(values), 0.5, 0.5, 2, horizon)


class TestTruncatedModel(unittest.TestCase):
    """截断经验模型"""

    def test_first_occurrence_only(self):
        """m̄ = 1：每个列表只计第一次出现"""
        model = build_truncated_model(one_state_dataset(), quantile_table([[1]]))
        self.assertEqual(model.counts[0, 0], 2)
        self.assertAlmostEqual(model.reward[0, 0], 0.5)
        np.testing.assert_allclose(model.transition[0, 0], [1.0])
        np.testing.assert_allclose(model.initial, [1.0])
        self.assertEqual(model.provenance, "truncated-episodic")

    def test_first_two_occurrences(self):
        model = build_truncated_model(one_state_dataset(), quantile_table([[2]]))
        self.assertEqual(model.counts[0, 0], 4)
        self.assertAlmostEqual(model.reward[0, 0], 0.6)

    def test_zero_quantile_drops_everything(self):
        """m̄ = 0 的行全部截掉，P̂ 行为 0"""
        dataset = one_state_dataset()
        mask = truncation_mask(dataset, quantile_table([[0]]))
        np.testing.assert_array_equal(mask, np.zeros((2, 3), dtype=bool))
        model = build_truncated_model(dataset, quantile_table([[0]]))
        self.assertEqual(model.counts[0, 0], 0)
        np.testing.assert_array_equal(model.transition[0, 0], [0.0])
        self.assertFalse(model.visited()[0, 0])
        with self.assertRaises(InvariantViolationError):
            model.to_mdp()

    def test_dimension_mismatch(self):
        with self.assertRaises(DimensionMismatchError):
            table = QuantileTable(np.ones((1, 1)), 0.5, 0.5, 2, 4)
            truncation_mask(one_state_dataset(), table)

    def test_model_validation(self):
        with self.assertRaises(InvariantViolationError):
            EstimatedModel(
                np.array([[[0.5]]]),
                np.zeros((1, 1)),
                np.ones(1),
                np.ones((1, 1)),
                2,
                "generative",
            )
        with self.assertRaises(InvariantViolationError):
            EstimatedModel(
                np.array([[[1.0]]]), np.zeros((1, 1)), np.ones(1), None, 2, "generative"
            )


class TestGenerativeModel(unittest.TestCase):

    def test_counts_and_queries(self):
        """每个 (s, a) 抽 N 次，另从 mu 抽 N 次"""
        sampler = GenerativeSampler(twostate_exit(4))
        model = build_generative_model(sampler, 10, RngStream(0))
        self.assertEqual(sampler.queries, 2 * 2 * 10 + 10)
        np.testing.assert_array_equal(model.counts, np.full((2, 2), 10))
        np.testing.assert_allclose(model.transition, twostate_exit(4).transition)
        np.testing.assert_allclose(model.initial, [1.0, 0.0])
        np.testing.assert_allclose(model.reward, twostate_exit(4).mean_reward)
        with self.assertRaises(InvariantViolationError):
            build_generative_model(sampler, 0, RngStream(1))


class TestConfidenceWidths(unittest.TestCase):
    """置信区间半宽"""

    def test_formula(self):
        model = build_truncated_model(one_state_dataset(), quantile_table([[1]]))
        model_set = confidence_widths(model, quantile_table([[1]]), 2, 0.5, 0.5)
        log_p = math.log(36.0)
        expected = max(512 * log_p, 32 * math.sqrt(log_p))
        self.assertAlmostEqual(model_set.transition_width[0, 0, 0], expected)
        initial = math.sqrt(math.log(36.0) / 2)
        self.assertAlmostEqual(model_set.initial_width[0], initial)
        reward = 8 * math.sqrt(log_p) + 8 * log_p
        self.assertAlmostEqual(model_set.reward_width[0, 0], reward)

    def test_unvisited_rows_are_full_simplex(self):
        model = build_truncated_model(one_state_dataset(), quantile_table([[0]]))
        model_set = confidence_widths(model, quantile_table([[0]]), 2, 0.5, 0.5)
        np.testing.assert_array_equal(model_set.transition_width, [[[1.0]]])
        self.assertEqual(model_set.reward_width[0, 0], 1.0)

    def test_width_shrinks_with_lists(self):
        mdp = random_dense(2, 2, 7, 3)
        center = EstimatedModel(
            mdp.transition,
            mdp.mean_reward,
            mdp.initial,
            np.ones((2, 2)),
            3,
            "generative",
        )
        table = QuantileTable(np.full((2, 2), 3), 0.5, 0.1, 10, 3)
        few = confidence_widths(center, table, 10, 0.5, 0.1)
        many = confidence_widths(center, table, 1000, 0.5, 0.1)
        self.assertTrue(np.all(many.transition_width < few.transition_width))
        self.assertTrue(np.all(many.initial_width < few.initial_width))

    def test_arguments(self):
        model = build_truncated_model(one_state_dataset(), quantile_table([[1]]))
        with self.assertRaises(InvariantViolationError):
            confidence_widths(model, quantile_table([[1]]), 0, 0.5, 0.5)
        with self.assertRaises(InvariantViolationError):
            confidence_widths(model, quantile_table([[1]]), 2, 0.0, 0.5)
        with self.assertRaises(DimensionMismatchError):
            table = QuantileTable(np.ones((1, 2)), 0.5, 0.5, 2, 3)
            confidence_widths(model, table, 2, 0.5, 0.5)


class TestIntervalModelSet(unittest.TestCase):
    """区间集合与成员判定"""

    def test_exact_contains_truth(self):
        mdp = random_dense(3, 2, 1, 4)
        self.assertTrue(contains(IntervalModelSet.exact(mdp), mdp))
        other = random_dense(3, 2, 2, 4)
        self.assertFalse(contains(IntervalModelSet.exact(mdp), other))

    def test_widths_admit_nearby_model(self):
        mdp = random_dense(2, 2, 1, 4)
        other = random_dense(2, 2, 2, 4)
        gap = np.abs(mdp.transition - other.transition).max()
        gap_mu = np.abs(mdp.initial - other.initial).max()
        center = EstimatedModel.from_mdp(mdp)
        widths = np.full((2, 2, 2), gap)
        model_set = IntervalModelSet(center, widths, np.full(2, gap_mu))
        self.assertTrue(contains(model_set, other))
        self.assertFalse(contains(model_set.scaled(0.5), other))

    def test_shapes_checked(self):
        center = EstimatedModel.from_mdp(twostate_exit(3))
        with self.assertRaises(DimensionMismatchError):
            IntervalModelSet(center, np.zeros((2, 2)), np.zeros(2))
        with self.assertRaises(InvariantViolationError):
            IntervalModelSet(center, np.full((2, 2, 2), -0.1), np.zeros(2))
        with self.assertRaises(DimensionMismatchError):
            contains(IntervalModelSet.exact(twostate_exit(3)), random_dense(3, 2, 1, 3))


if __name__ == '__main__':
    unittest.main(verbosity=2)
