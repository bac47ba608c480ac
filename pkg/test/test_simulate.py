import logging
import unittest

import numpy as np
import pandas as pd
import pytest

from sentinelinfer import (
    Dataset,
    EffortModel,
    RoundOutcomes,
    SamplingDesign,
    SentinelScheme,
    SyntheticConfig,
    generate_synthetic,
    ingest_csv,
    realized_cost,
    simulate_round,
)
from sentinelinfer.exceptions import ConfigError, DataError, DomainError, ParseError
from sentinelinfer.simulate import Instance, keyed_uniforms


def sentinel_design(n, rho=0.2, bonus=2.0, w0=0.1, k=0.0, pi=1.0, cost_mode="aggregate"):
    model = EffortModel()
    scheme = SentinelScheme(rho=rho, bonus=bonus, w0=w0, k=k, cost_mode=cost_mode)
    return SamplingDesign(
        pi=np.full(n, pi),
        efforts=scheme.efforts(model, n),
        model=model,
        budget=1.0,
        method="fixed-rho-b",
        scheme=scheme,
    )


class TestSyntheticGenerator(unittest.TestCase):

    def test_reproducible(self):
        config = SyntheticConfig(n=200)
        first, second = generate_synthetic(config, 3), generate_synthetic(config, 3)
        np.testing.assert_array_equal(first.prediction, second.prediction)
        np.testing.assert_array_equal(first.y_true, second.y_true)
        self.assertFalse(np.array_equal(first.prediction, generate_synthetic(config, 4).prediction))

    def test_binary_identity(self):
        dataset = generate_synthetic(SyntheticConfig(n=500, calibration="miscalibrated", distortion=2.0), 0)
        np.testing.assert_allclose(dataset.prediction, dataset.expected_ai_output(), atol=1e-12)
        np.testing.assert_array_equal(dataset.y_false, 1.0 - dataset.y_true)
        np.testing.assert_allclose(dataset.uncertainty, dataset.prediction * (1 - dataset.prediction))
        self.assertEqual(dataset.provenance["seed"], 0)

    def test_hard_predictions(self):
        dataset = generate_synthetic(SyntheticConfig(n=300, hard_predictions=True), 1)
        self.assertTrue(np.all(np.isin(dataset.prediction, (0.0, 1.0))))
        np.testing.assert_array_equal(dataset.ai_error_prob, (dataset.prediction != dataset.y_true).astype(float))

    def test_two_groups(self):
        dataset = generate_synthetic(SyntheticConfig(n=400, two_groups=True, group_shift=2.0), 2)
        self.assertTrue(np.all(np.isin(dataset.group, (0, 1))))
        self.assertGreater(np.sum(dataset.group == 0), 100)
        self.assertGreater(np.sum(dataset.group == 1), 100)

    def test_continuous_identity(self):
        dataset = generate_synthetic(SyntheticConfig(n=500, task="continuous"), 5)
        self.assertEqual(dataset.task, "continuous")
        np.testing.assert_allclose(dataset.prediction, dataset.expected_ai_output(), atol=1e-9)
        self.assertTrue(np.all(dataset.uncertainty > 0))

    def test_invalid_config(self):
        with self.assertRaises(ConfigError):
            SyntheticConfig(n=0)
        with self.assertRaises(ConfigError):
            SyntheticConfig(calibration="poor")
        with self.assertRaises(ConfigError):
            SyntheticConfig.from_dict({"n": 10, "size": 3})
        with self.assertRaises(DomainError):
            generate_synthetic(SyntheticConfig(n=10), -1)


class TestDataset(unittest.TestCase):

    def setUp(self):
        self.y_true = np.array([1.0, 0.0, 1.0, 1.0])
        self.prediction = np.array([0.8, 0.3, 0.6, 0.9])
        self.dataset = Dataset(
            ids=np.array([3, 1, 7, 4]),
            prediction=self.prediction,
            ai_error_prob=np.abs(self.y_true - self.prediction),
            y_true=self.y_true,
            y_false=1.0 - self.y_true,
            group=np.array([0, 1, 1, 0]),
        )

    def test_records(self):
        self.assertEqual(len(self.dataset), 4)
        self.assertEqual(
            self.dataset[2],
            Instance(id=7, prediction=0.6, ai_error_prob=0.4, y_true=1.0, y_false=0.0, group=1),
        )
        self.assertEqual([instance.id for instance in self.dataset], [3, 1, 7, 4])
        self.assertAlmostEqual(self.dataset.true_mean, 0.75)

    def test_subset(self):
        part = self.dataset.subset(self.dataset.group == 1)
        np.testing.assert_array_equal(part.ids, [1, 7])
        np.testing.assert_array_equal(part.prediction, [0.3, 0.6])

    def test_invalid(self):
        with self.assertRaises(DataError):
            Dataset(ids=[1, 1], prediction=[0.5, 0.5], ai_error_prob=[0.5, 0.5], y_true=[1, 0], y_false=[0, 1])
        with self.assertRaises(DataError):
            Dataset(ids=[1], prediction=[0.5], ai_error_prob=[0.5], y_true=[2.0], y_false=[-1.0])
        with self.assertRaises(DataError):
            Dataset(ids=[1], prediction=[0.5], ai_error_prob=[0.5], y_true=[1.0], y_false=[1.0])
        with self.assertRaises(DataError):
            Dataset(ids=[1], prediction=[0.5], ai_error_prob=[1.5], y_true=[1.0], y_false=[0.0])
        with self.assertRaises(DataError):
            Dataset(ids=[1, 2], prediction=[0.5], ai_error_prob=[0.5], y_true=[1.0], y_false=[0.0])

    def test_mismatched_prediction_warns(self):
        logger = logging.getLogger("sentinelinfer.simulate")
        with self.assertLogs(logger, level="WARNING"):
            Dataset(ids=[0], prediction=[1.0], ai_error_prob=[0.3], y_true=[1.0], y_false=[0.0])


def test_keyed_uniforms_depend_only_on_id():
    full = keyed_uniforms(11, 0, np.arange(20))
    np.testing.assert_array_equal(keyed_uniforms(11, 0, np.array([5, 2, 9])), full[[5, 2, 9]])
    assert not np.array_equal(keyed_uniforms(11, 1, np.arange(20)), full)
    assert np.all((full >= 0) & (full < 1))


def test_keyed_uniforms_sparse_ids():
    ids = np.array([10 ** 9, 3, 10 ** 12])
    first = keyed_uniforms(4, 2, ids)
    np.testing.assert_array_equal(first, keyed_uniforms(4, 2, ids))
    np.testing.assert_array_equal(first[[1, 0]], keyed_uniforms(4, 2, ids[[1, 0]]))
    with pytest.raises(DomainError):
        keyed_uniforms(-1, 0, ids)


class TestSimulateRound(unittest.TestCase):

    def setUp(self):
        self.dataset = generate_synthetic(SyntheticConfig(n=20000, alpha=2.0, beta=2.0), 9)
        self.n = len(self.dataset)

    def test_sentinel_frequency_and_payments(self):
        design = sentinel_design(self.n, rho=0.2, bonus=2.0, w0=0.1)
        outcomes = simulate_round(self.dataset, design, seed=1)
        self.assertEqual(outcomes.n_sampled, self.n)
        self.assertAlmostEqual(outcomes.n_sentinels / self.n, 0.2, delta=3 * np.sqrt(0.16 / self.n))
        np.testing.assert_array_equal(outcomes.bonus_paid[~outcomes.sentinel], 0.0)
        self.assertTrue(set(np.unique(outcomes.bonus_paid[outcomes.sentinel])) <= {0.0, 2.0})
        np.testing.assert_array_equal(outcomes.base_paid, 0.1)

    def test_unsampled_instances_have_no_label(self):
        design = sentinel_design(self.n, pi=0.3)
        outcomes = simulate_round(self.dataset, design, seed=2)
        self.assertTrue(np.all(np.isnan(outcomes.label[~outcomes.sampled])))
        self.assertFalse(np.any(np.isnan(outcomes.label[outcomes.sampled])))
        self.assertFalse(np.any(outcomes.regular[~outcomes.sampled]))
        np.testing.assert_array_equal(outcomes.base_paid[~outcomes.sampled], 0.0)
        self.assertIsNone(outcomes[int(np.flatnonzero(~outcomes.sampled)[0])].label)

    def test_full_effort_is_always_correct(self):
        design = sentinel_design(self.n)
        outcomes = simulate_round(self.dataset, design, seed=3, efforts=1.0)
        np.testing.assert_array_equal(outcomes.label, self.dataset.y_true)
        np.testing.assert_array_equal(outcomes.bonus_paid[outcomes.sentinel], 2.0)
        np.testing.assert_array_equal(outcomes.effort_used, 1.0)

    def test_zero_effort_keeps_ai_errors(self):
        design = sentinel_design(self.n)
        outcomes = simulate_round(self.dataset, design, seed=4, efforts=0.0)
        sentinel = outcomes.sentinel
        np.testing.assert_array_equal(outcomes.label[sentinel], self.dataset.y_false[sentinel])
        self.assertEqual(float(np.sum(outcomes.bonus_paid)), 0.0)
        regular = outcomes.regular
        accuracy = np.mean(outcomes.label[regular] == self.dataset.y_true[regular])
        expected = 1.0 - np.mean(self.dataset.ai_error_prob[regular])
        self.assertAlmostEqual(accuracy, expected, delta=0.015)

    def test_symmetric_channel(self):
        design = sentinel_design(self.n)
        right = simulate_round(self.dataset, design, seed=5, label_channel="symmetric", efforts=1.0)
        wrong = simulate_round(self.dataset, design, seed=5, label_channel="symmetric", efforts=0.0)
        np.testing.assert_array_equal(right.label, self.dataset.y_true)
        np.testing.assert_array_equal(wrong.label, self.dataset.y_false)

    def test_reproducible_and_stable_under_subsetting(self):
        design = sentinel_design(self.n, pi=0.5)
        first = simulate_round(self.dataset, design, seed=6)
        second = simulate_round(self.dataset, design, seed=6)
        np.testing.assert_array_equal(first.sampled, second.sampled)
        np.testing.assert_array_equal(first.label, second.label)

        mask = np.arange(self.n) % 3 == 0
        part = simulate_round(self.dataset.subset(mask), design.subset(mask), seed=6)
        np.testing.assert_array_equal(part.sampled, first.sampled[mask])
        np.testing.assert_array_equal(part.label, first.label[mask])

    def test_invalid_arguments(self):
        with self.assertRaises(DomainError):
            simulate_round(self.dataset, sentinel_design(10))
        with self.assertRaises(DomainError):
            simulate_round(self.dataset, sentinel_design(self.n), label_channel="noisy")


def test_realized_cost_by_mode():
    dataset = generate_synthetic(SyntheticConfig(n=1000), 0)
    aggregate = sentinel_design(1000, rho=0.2, k=3.0)
    outcomes = simulate_round(dataset, aggregate, seed=0)
    paid = float(np.sum(outcomes.bonus_paid) + np.sum(outcomes.base_paid))
    assert realized_cost(outcomes) == pytest.approx(paid)
    assert realized_cost(outcomes, aggregate.scheme) == pytest.approx(paid + 0.6)
    per_sentinel = sentinel_design(1000, rho=0.2, k=3.0, cost_mode="per_sentinel")
    assert realized_cost(outcomes, per_sentinel.scheme) == pytest.approx(paid + 3.0 * outcomes.n_sentinels)


def test_realized_cost_matches_expected_cost():
    dataset = generate_synthetic(SyntheticConfig(n=1000), 0)
    design = sentinel_design(1000, rho=0.2, bonus=2.0, w0=0.1, k=3.0, pi=0.5)
    costs = np.array([realized_cost(simulate_round(dataset, design, seed=seed), design.scheme) for seed in range(300)])
    se = np.std(costs, ddof=1) / np.sqrt(len(costs))
    assert abs(np.mean(costs) - design.expected_cost()) <= 3 * se


def test_outcomes_csv(tmp_path):
    dataset = generate_synthetic(SyntheticConfig(n=50), 0)
    outcomes = simulate_round(dataset, sentinel_design(50, pi=0.5), seed=0)
    filepath = tmp_path / "outcomes.csv"
    outcomes.to_csv(filepath)
    loaded = RoundOutcomes.read_csv(filepath)
    assert loaded.aligned_with(dataset)
    np.testing.assert_array_equal(loaded.sampled, outcomes.sampled)
    np.testing.assert_array_equal(loaded.regular, outcomes.regular)
    np.testing.assert_array_equal(np.isnan(loaded.label), np.isnan(outcomes.label))

    pd.DataFrame({"id": [0]}).to_csv(filepath, index=False)
    with pytest.raises(DataError):
        RoundOutcomes.read_csv(filepath)


def test_ingest_csv_derives_columns(tmp_path):
    filepath = tmp_path / "scores.csv"
    pd.DataFrame({
        "item": [0, 1, 2],
        "score": [0.9, 0.2, 0.7],
        "truth": [1, 0, 0],
        "group": [0, 1, 1],
    }).to_csv(filepath, index=False)
    dataset = ingest_csv(filepath, schema={"id": "item", "prediction": "score", "y_true": "truth"})
    np.testing.assert_allclose(dataset.ai_error_prob, [0.1, 0.2, 0.7])
    np.testing.assert_array_equal(dataset.y_false, [0.0, 1.0, 1.0])
    np.testing.assert_array_equal(dataset.group, [0, 1, 1])
    assert dataset.provenance["derived"] == ["y_false", "ai_error_prob"]
    assert dataset.uncertainty is None


def test_ingest_csv_reports_line(tmp_path):
    filepath = tmp_path / "bad.csv"
    filepath.write_text("id,prediction,y_true\n0,0.5,1\n1,0.4,0\n2,abc,1\n")
    with pytest.raises(ParseError) as info:
        ingest_csv(filepath)
    assert info.value.line == 4

    filepath.write_text("id,prediction,y_true\n0,0.5,1\n1,1.4,0\n")
    with pytest.raises(ParseError) as info:
        ingest_csv(filepath)
    assert info.value.line == 3


def test_ingest_csv_missing_columns(tmp_path):
    filepath = tmp_path / "short.csv"
    filepath.write_text("id,prediction\n0,0.5\n")
    with pytest.raises(DataError):
        ingest_csv(filepath)
    filepath.write_text("id,prediction,y_true\n0,0.5,1.2\n")
    with pytest.raises(DataError):
        ingest_csv(filepath, task="continuous")


def test_ingest_csv_ragged_row(tmp_path):
    filepath = tmp_path / "ragged.csv"
    filepath.write_text("id,prediction,y_true\n0,0.5,1\n1,0.5,0,9\n")
    with pytest.raises(ParseError) as info:
        ingest_csv(filepath)
    assert info.value.line == 3

    filepath.write_text("")
    with pytest.raises(ParseError):
        ingest_csv(filepath)


def test_dataset_csv_always_has_uncertainty(tmp_path):
    dataset = generate_synthetic(SyntheticConfig(n=20), 0)
    plain = Dataset(
        ids=dataset.ids,
        prediction=dataset.prediction,
        ai_error_prob=dataset.ai_error_prob,
        y_true=dataset.y_true,
        y_false=dataset.y_false,
    )
    filepath = tmp_path / "dataset.csv"
    plain.to_csv(filepath)
    header = filepath.read_text().splitlines()[0]
    assert header == "id,prediction,y_true,y_false,ai_error_prob,uncertainty"

    restored = ingest_csv(filepath)
    assert restored.uncertainty is None
    np.testing.assert_allclose(restored.ai_error_prob, plain.ai_error_prob)

    dataset.to_csv(filepath)
    np.testing.assert_allclose(ingest_csv(filepath).uncertainty, dataset.uncertainty)
