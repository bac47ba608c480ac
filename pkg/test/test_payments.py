import unittest

import numpy as np
import pandas as pd
import pytest

from sentinelinfer import (
    EffortModel,
    LinearAccuracyPayment,
    SentinelScheme,
    accuracy_label_cost,
    agent_payoff_linear,
    agent_payoff_sentinel,
    best_response_effort,
    collapse_curve,
    expected_cost,
    loglog_slope,
    per_sample_cost,
    required_linear_payment,
    required_linear_reward,
    symmetric_label_cost,
)
from sentinelinfer.exceptions import DomainError
from sentinelinfer.payments import write_collapse_csv


class TestLinearAccuracyPayment(unittest.TestCase):

    def setUp(self):
        self.model = EffortModel()

    def test_required_reward_and_payment(self):
        self.assertAlmostEqual(required_linear_reward(0.5, 0.1, self.model), 5.0)
        self.assertAlmostEqual(required_linear_payment(0.5, 0.1, self.model), 4.75)

    def test_spot_checks_raise_the_reward_not_the_payment(self):
        self.assertAlmostEqual(required_linear_reward(0.5, 0.1, self.model, check_probability=0.5), 10.0)
        self.assertAlmostEqual(required_linear_payment(0.5, 0.1, self.model, check_probability=0.5), 4.75)

    def test_required_reward_induces_target_effort(self):
        p = 0.05
        scheme = LinearAccuracyPayment(required_linear_reward(0.8, p, self.model))
        effort = best_response_effort(lambda e: agent_payoff_linear(scheme, self.model, p, e))
        self.assertAlmostEqual(effort, 0.8, delta=1e-6)

    def test_invalid_arguments(self):
        with self.assertRaises(DomainError):
            required_linear_reward(0.0, 0.1, self.model)
        with self.assertRaises(DomainError):
            required_linear_reward(0.5, 1.0, self.model)
        with self.assertRaises(DomainError):
            LinearAccuracyPayment(1.0, check_probability=0.0)
        with self.assertRaises(DomainError):
            LinearAccuracyPayment(-1.0)

    def test_accuracy_label_cost(self):
        self.assertAlmostEqual(accuracy_label_cost(0.8, 0.1, self.model, w0=0.25), 8.09)

    def test_symmetric_label_cost(self):
        # R* = 0.8 paid on a label correct with probability q(0.8)
        self.assertAlmostEqual(symmetric_label_cost(0.8, self.model, w0=0.25), 0.89)
        self.assertLess(symmetric_label_cost(0.8, self.model), accuracy_label_cost(0.8, 0.1, self.model))
        with self.assertRaises(DomainError):
            symmetric_label_cost(1.0, self.model)


class TestSentinelScheme(unittest.TestCase):

    def setUp(self):
        self.model = EffortModel()
        self.scheme = SentinelScheme(rho=0.1, bonus=2.0, w0=0.04, k=0.5)

    def test_validation(self):
        with self.assertRaises(DomainError):
            SentinelScheme(rho=0.0, bonus=1.0)
        with self.assertRaises(DomainError):
            SentinelScheme(rho=1.0, bonus=1.0)
        with self.assertRaises(DomainError):
            SentinelScheme(rho=0.1, bonus=-1.0)
        with self.assertRaises(DomainError):
            SentinelScheme(rho=0.1, bonus=np.ones((2, 2)))
        with self.assertRaises(DomainError):
            SentinelScheme(rho=0.1, bonus=1.0, cost_mode="per_round")

    def test_bonus_schedule(self):
        self.assertTrue(self.scheme.constant_bonus)
        np.testing.assert_array_equal(self.scheme.bonus_for(3), [2.0, 2.0, 2.0])
        schedule = SentinelScheme(rho=0.1, bonus=np.array([1.0, 5.0]))
        self.assertFalse(schedule.constant_bonus)
        with self.assertRaises(DomainError):
            schedule.bonus_for(3)
        np.testing.assert_allclose(schedule.efforts(self.model, 2), [0.1, 0.5])

    def test_dict_roundtrip(self):
        schedule = SentinelScheme(rho=0.2, bonus=np.array([1.0, 3.0]), w0=0.1, k=1.0, cost_mode="per_sentinel")
        restored = SentinelScheme.from_dict(schedule.to_dict())
        np.testing.assert_array_equal(restored.bonus, schedule.bonus)
        self.assertEqual(restored.cost_mode, "per_sentinel")
        self.assertEqual(restored.k, 1.0)

    def test_per_sample_cost(self):
        efforts = self.scheme.efforts(self.model, 2)
        np.testing.assert_allclose(efforts, [0.2, 0.2])
        np.testing.assert_allclose(per_sample_cost(self.scheme, efforts, self.model), [0.08, 0.08])
        per_sentinel = SentinelScheme(rho=0.1, bonus=2.0, w0=0.04, k=0.5, cost_mode="per_sentinel")
        np.testing.assert_allclose(per_sample_cost(per_sentinel, efforts, self.model), [0.13, 0.13])

    def test_expected_cost_by_mode(self):
        pi = np.array([0.5, 0.25])
        efforts = self.scheme.efforts(self.model, 2)
        self.assertAlmostEqual(expected_cost(self.scheme, pi, efforts, self.model), 0.11)
        per_sentinel = SentinelScheme(rho=0.1, bonus=2.0, w0=0.04, k=0.5, cost_mode="per_sentinel")
        self.assertEqual(per_sentinel.fixed_cost, 0.0)
        self.assertAlmostEqual(expected_cost(per_sentinel, pi, efforts, self.model), 0.0975)

    def test_expected_cost_misaligned(self):
        with self.assertRaises(DomainError):
            expected_cost(self.scheme, np.array([0.5]), np.array([0.2, 0.2]), self.model)
        with self.assertRaises(DomainError):
            expected_cost(self.scheme, np.array([1.5, 0.5]), np.array([0.2, 0.2]), self.model)

    def test_sentinel_payoff(self):
        scheme = SentinelScheme(rho=0.1, bonus=5.0, w0=0.25)
        self.assertAlmostEqual(agent_payoff_sentinel(scheme, self.model, 5.0, 0.5), 0.375)
        effort = best_response_effort(lambda e: agent_payoff_sentinel(scheme, self.model, 5.0, e))
        self.assertAlmostEqual(effort, 0.5, delta=1e-6)


def test_collapse_curve_slope_is_one():
    model = EffortModel()
    p_grid = np.geomspace(1e-1, 1e-4, 40)
    for e_min in (0.3, 0.5, 0.8):
        curve = collapse_curve(e_min, model, p_grid)
        assert list(curve.columns) == ["p", "required_payment"]
        assert np.all(np.diff(curve["required_payment"].to_numpy()) > 0)
        assert loglog_slope(curve) == pytest.approx(1.0, abs=0.02)


def test_collapse_curve_needs_decreasing_grid():
    with pytest.raises(DomainError):
        collapse_curve(0.5, EffortModel(), [0.01, 0.1])
    with pytest.raises(DomainError):
        collapse_curve(0.5, EffortModel(), [0.1, 0.0])


def test_write_collapse_csv(tmp_path):
    curve = collapse_curve(0.5, EffortModel(), [0.1, 0.01])
    filepath = tmp_path / "collapse.csv"
    write_collapse_csv(curve, filepath)
    loaded = pd.read_csv(filepath)
    np.testing.assert_allclose(loaded["required_payment"], [4.75, 49.75])
