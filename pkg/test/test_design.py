import os
import tempfile
import unittest

import numpy as np
import pytest

from sentinelinfer import (
    Dataset,
    DesignProblem,
    EffortModel,
    PowerCorrection,
    PowerUtility,
    SamplingDesign,
    SentinelScheme,
    active_design,
    design_fixed_b,
    design_fixed_rho,
    design_fixed_rho_b,
    design_joint,
    expected_cost,
    estimate_tau,
    per_sample_cost,
    uniform_design,
    water_fill,
    weighted_objective,
)
from sentinelinfer.design import fixed_b_criterion, fixed_rho_bonus
from sentinelinfer.exceptions import (
    DataError,
    DomainError,
    FamilyError,
    InfeasibleBudgetError,
    InfiniteObjectiveError,
)


class TestWaterFill(unittest.TestCase):

    def test_caps_and_budget(self):
        pi = water_fill(np.array([1.0, 2.0, 3.0, 0.0]), 3.0, 1.0, pi_min=1e-4)
        self.assertEqual(pi[1], 1.0)
        self.assertEqual(pi[2], 1.0)
        self.assertEqual(pi[3], 1e-4)
        self.assertAlmostEqual(pi[0], 1.0 - 1e-4)
        self.assertAlmostEqual(float(np.sum(pi)), 3.0)

    def test_proportional_when_uncapped(self):
        weights = np.array([0.1, 0.2, 0.4])
        pi = water_fill(weights, 0.35, np.array([1.0, 1.0, 0.5]))
        np.testing.assert_allclose(pi / weights, np.full(3, pi[0] / weights[0]))
        self.assertAlmostEqual(float(np.sum(pi * np.array([1.0, 1.0, 0.5]))), 0.35)

    def test_idempotent(self):
        weights = np.random.default_rng(3).gamma(0.5, 1.0, size=200) + 1e-3
        costs = np.linspace(0.5, 2.0, 200)
        pi = water_fill(weights, 60.0, costs)
        self.assertTrue(np.any(pi == 1.0))
        np.testing.assert_allclose(water_fill(pi, 60.0, costs), pi, rtol=1e-10)

    def test_budget_that_does_not_bind(self):
        np.testing.assert_array_equal(water_fill(np.array([1.0, 2.0]), 10.0), [1.0, 1.0])

    def test_budget_below_floor(self):
        with self.assertRaises(InfeasibleBudgetError):
            water_fill(np.array([0.0, 0.0, 1.0]), 1e-5, pi_min=1e-4)

    def test_invalid_inputs(self):
        with self.assertRaises(DomainError):
            water_fill(np.array([-1.0, 1.0]), 1.0)
        with self.assertRaises(DomainError):
            water_fill(np.array([1.0, 1.0]), 1.0, 0.0)


class TestSentinelDesigns(unittest.TestCase):

    def setUp(self):
        rng = np.random.default_rng(7)
        self.tau = rng.uniform(0.01, 0.25, 200)
        self.model = EffortModel()

    def test_fixed_rho_b_spends_budget(self):
        problem = DesignProblem(self.tau, 5.0, w0=0.05, k=1.0, model=self.model)
        design = design_fixed_rho_b(problem, 0.2, 2.0)
        self.assertTrue(design.is_sentinel)
        self.assertAlmostEqual(design.expected_cost(), 5.0, places=9)
        np.testing.assert_allclose(design.pi / np.sqrt(self.tau), np.full(200, design.pi[0] / np.sqrt(self.tau[0])))
        self.assertAlmostEqual(design.objective_value, weighted_objective(design, self.tau))

    def test_fixed_rho_b_per_instance_bonus(self):
        bonus = np.where(np.arange(200) % 2 == 0, 1.0, 3.0)
        problem = DesignProblem(self.tau, 3.0, w0=0.05, model=self.model)
        design = design_fixed_rho_b(problem, 0.2, bonus)
        q = design.correction_probabilities()
        unit = per_sample_cost(design.scheme, design.efforts, self.model)
        ratio = design.pi / np.sqrt(self.tau / (q * unit))
        np.testing.assert_allclose(ratio, np.full(200, ratio[0]))
        self.assertAlmostEqual(design.expected_cost(), 3.0, places=9)

    def test_fixed_rho_b_aggregate_cost_exceeds_budget(self):
        problem = DesignProblem(self.tau, 0.05, w0=0.05, k=1.0, model=self.model)
        with self.assertRaises(InfeasibleBudgetError):
            design_fixed_rho_b(problem, 0.1, 2.0)

    def test_fixed_rho_closed_form(self):
        w0, rho, k, budget = 0.04, 0.1, 0.5, 2.0
        problem = DesignProblem(self.tau, budget, w0=w0, k=k, model=self.model)
        design = design_fixed_rho(problem, rho)
        self.assertAlmostEqual(design.scheme.bonus, 2.0)
        self.assertAlmostEqual(fixed_rho_bonus(problem, rho), np.sqrt(w0) / rho)
        np.testing.assert_allclose(design.efforts, np.sqrt(w0))
        unit = per_sample_cost(design.scheme, design.efforts, self.model)
        np.testing.assert_allclose(unit, 2 * w0)
        self.assertAlmostEqual(float(np.sum(design.pi)), (budget - rho * k) / (2 * w0))
        self.assertLess(float(np.max(design.pi)), 1.0)
        self.assertAlmostEqual(design.expected_cost(), budget, places=9)

    def test_fixed_rho_per_sentinel_mode(self):
        w0, rho, k, budget = 0.04, 0.1, 0.5, 2.0
        problem = DesignProblem(self.tau, budget, w0=w0, k=k, model=self.model, cost_mode="per_sentinel")
        design = design_fixed_rho(problem, rho)
        self.assertAlmostEqual(float(np.sum(design.pi)), budget / (2 * w0 + rho * k))
        self.assertAlmostEqual(design.expected_cost(), budget, places=9)

    def test_fixed_rho_requires_family(self):
        problem = DesignProblem(self.tau, 2.0, w0=0.04, model=EffortModel(utility=PowerUtility(0.5)))
        with self.assertRaises(FamilyError):
            design_fixed_rho(problem, 0.1)
        with self.assertRaises(DomainError):
            design_fixed_rho(DesignProblem(self.tau, 2.0, model=self.model), 0.1)

    def test_fixed_b_closed_form(self):
        w0, b = 0.01, 1.0
        problem = DesignProblem(np.ones(100), 10.0, w0=w0, model=self.model)
        design = design_fixed_b(problem, b)
        expected = (-w0 + np.sqrt(w0 * (w0 + b * b))) / (b * b)
        self.assertAlmostEqual(design.rho, expected, delta=1e-5)
        self.assertAlmostEqual(design.rho, 0.09050, delta=1e-5)
        value = fixed_b_criterion(problem, design.rho, b)
        self.assertLessEqual(value, fixed_b_criterion(problem, design.rho + 0.01, b))
        self.assertLessEqual(value, fixed_b_criterion(problem, design.rho - 0.01, b))

    def test_fixed_b_requires_family(self):
        problem = DesignProblem(self.tau, 2.0, w0=0.04, model=EffortModel(correction=PowerCorrection(0.5)))
        with self.assertRaises(FamilyError):
            design_fixed_b(problem, 1.0)

    def test_joint_sits_at_bonus_cap(self):
        w0 = 0.25
        problem = DesignProblem(self.tau, 20.0, w0=w0, model=self.model)
        design = design_joint(problem, max_bonus=20.0)
        self.assertAlmostEqual(design.rho, np.sqrt(w0) / 20.0, delta=1e-3)
        self.assertAlmostEqual(design.scheme.bonus, 20.0, delta=0.2)
        self.assertAlmostEqual(design.expected_cost(), 20.0, places=6)

    def test_joint_beats_fixed_rho(self):
        problem = DesignProblem(self.tau, 20.0, w0=0.25, model=self.model)
        joint = design_joint(problem, max_bonus=20.0)
        fixed = design_fixed_rho(problem, 0.1)
        self.assertLessEqual(joint.objective_value, fixed.objective_value * (1 + 1e-6))


class TestBaselineDesigns(unittest.TestCase):

    def setUp(self):
        self.tau = np.linspace(0.01, 0.25, 100)
        self.problem = DesignProblem(self.tau, 30.0, model=EffortModel())

    def test_uniform(self):
        design = uniform_design(self.problem, 0.8, 1.5)
        np.testing.assert_allclose(design.pi, 0.2)
        self.assertFalse(design.is_sentinel)
        self.assertEqual(design.rho, 0.0)
        self.assertAlmostEqual(design.expected_cost(), 30.0)
        np.testing.assert_allclose(design.bonuses(), 0.0)

    def test_uniform_caps_at_one(self):
        design = uniform_design(self.problem, 0.8, 0.1)
        np.testing.assert_allclose(design.pi, 1.0)

    def test_active_mixture(self):
        uniform = uniform_design(self.problem, 0.8, 1.5)
        mixed = active_design(self.problem, 0.8, 1.5, tau_mix=0.5)
        pure = active_design(self.problem, 0.8, 1.5, tau_mix=0.0)
        np.testing.assert_allclose(mixed.pi, 0.5 * pure.pi + 0.5 * uniform.pi)
        np.testing.assert_allclose(active_design(self.problem, 0.8, 1.5, tau_mix=1.0).pi, uniform.pi)
        self.assertAlmostEqual(mixed.expected_cost(), 30.0)
        self.assertEqual(mixed.metadata["tau_mix"], 0.5)
        self.assertEqual(mixed.method, "active")
        self.assertLess(pure.objective_value, uniform.objective_value)
        with self.assertRaises(DomainError):
            active_design(self.problem, 0.8, 1.5, tau_mix=1.5)


class TestSamplingDesign(unittest.TestCase):

    def setUp(self):
        self.model = EffortModel()
        self.scheme = SentinelScheme(rho=0.1, bonus=np.array([1.0, 2.0, 4.0]), w0=0.1)
        self.design = SamplingDesign(
            pi=np.array([0.2, 0.5, 1.0]),
            efforts=self.scheme.efforts(self.model, 3),
            model=self.model,
            budget=1.0,
            method="fixed-rho-b",
            scheme=self.scheme,
        )

    def test_invariants(self):
        with self.assertRaises(DomainError):
            SamplingDesign(pi=np.ones(2), efforts=np.ones(2), model=self.model, budget=1.0, method="x")
        with self.assertRaises(DomainError):
            SamplingDesign(
                pi=np.ones(2), efforts=np.ones(2), model=self.model, budget=1.0, method="x",
                scheme=self.scheme, label_cost=1.0,
            )
        with self.assertRaises(DomainError):
            SamplingDesign(pi=np.array([1.5]), efforts=np.ones(1), model=self.model, budget=1.0, method="x",
                           label_cost=1.0)
        with self.assertRaises(DomainError):
            SamplingDesign(pi=np.ones(2), efforts=np.ones(3), model=self.model, budget=1.0, method="x",
                           label_cost=1.0)

    def test_subset_keeps_schedule(self):
        part = self.design.subset(np.array([True, False, True]))
        np.testing.assert_array_equal(part.pi, [0.2, 1.0])
        np.testing.assert_array_equal(part.bonuses(), [1.0, 4.0])

    def test_weighted_objective(self):
        tau = np.array([0.1, 0.0, 0.2])
        q = self.design.correction_probabilities()
        expected = np.mean([0.1 / (0.9 * 0.2 * q[0]), 0.0, 0.2 / (0.9 * 1.0 * q[2])])
        self.assertAlmostEqual(weighted_objective(self.design, tau), expected)
        with self.assertRaises(DomainError):
            weighted_objective(self.design, np.ones(2))

    def test_infinite_objective(self):
        design = SamplingDesign(
            pi=np.array([0.0, 0.5]), efforts=np.full(2, 0.5), model=self.model, budget=1.0,
            method="uniform", label_cost=1.0,
        )
        with self.assertRaises(InfiniteObjectiveError):
            weighted_objective(design, np.array([0.1, 0.1]))
        self.assertGreater(weighted_objective(design, np.array([0.0, 0.1])), 0.0)

    def test_save_load(self):
        with tempfile.TemporaryDirectory() as directory:
            filepath = os.path.join(directory, "design.json")
            self.design.save(filepath)
            loaded = SamplingDesign.load(filepath)
        np.testing.assert_allclose(loaded.pi, self.design.pi)
        np.testing.assert_allclose(loaded.bonuses(), self.design.bonuses())
        self.assertEqual(loaded.digest(), self.design.digest())


def _dataset(uncertainty=None):
    y_true = np.array([1.0, 0.0, 1.0])
    prediction = np.array([0.9, 0.2, 0.6])
    return Dataset(
        ids=np.arange(3),
        prediction=prediction,
        ai_error_prob=1.0 - (prediction * y_true + (1 - prediction) * (1 - y_true)),
        y_true=y_true,
        y_false=1.0 - y_true,
        uncertainty=uncertainty,
    )


def test_estimate_tau_strategies():
    dataset = _dataset(uncertainty=np.array([0.5, 0.4, 0.3]))
    np.testing.assert_allclose(estimate_tau(dataset, "column"), [0.5, 0.4, 0.3])
    np.testing.assert_allclose(estimate_tau(dataset, "binary-calibrated"), [0.09, 0.16, 0.24])
    np.testing.assert_allclose(estimate_tau(dataset, "residual-oracle"), [0.01, 0.04, 0.16])


def test_estimate_tau_missing_column():
    with pytest.raises(DataError):
        estimate_tau(_dataset(), "column")
    with pytest.raises(DomainError):
        estimate_tau(_dataset(), "oracle")


def test_design_problem_validation():
    with pytest.raises(DomainError):
        DesignProblem(np.zeros(3), 1.0)
    with pytest.raises(DomainError):
        DesignProblem(np.ones(3), 0.0)
    with pytest.raises(DomainError):
        DesignProblem(np.array([1.0, -0.1]), 1.0)
    with pytest.raises(DomainError):
        DesignProblem(np.ones(3), 1.0, cost_mode="weekly")


def test_expected_cost_is_monotone():
    model = EffortModel()
    pi = np.linspace(0.1, 0.9, 50)
    costs = []
    for bonus in (0.5, 1.0, 2.0, 5.0, 10.0, 20.0):
        scheme = SentinelScheme(rho=0.1, bonus=bonus, w0=0.25, k=1.0)
        costs.append(expected_cost(scheme, pi, scheme.efforts(model, len(pi)), model))
    assert np.all(np.diff(costs) > 0)

    scheme = SentinelScheme(rho=0.1, bonus=5.0, w0=0.25, k=1.0)
    efforts = scheme.efforts(model, len(pi))
    by_pi = [expected_cost(scheme, np.clip(pi + shift, 0.0, 1.0), efforts, model) for shift in (0.0, 0.05, 0.1, 0.2)]
    assert np.all(np.diff(by_pi) > 0)
