import json
import unittest

import pytest

from sentinelinfer import ExperimentConfig, load_config
from sentinelinfer.config import BaselineSettings, VerificationConfig
from sentinelinfer.exceptions import ConfigError
from sentinelinfer.simulate import SyntheticConfig


class TestExperimentConfig(unittest.TestCase):

    def setUp(self):
        self.config = ExperimentConfig(
            dataset=SyntheticConfig(n=300, two_groups=True),
            budgets=(50, 100),
            replications=10,
            baseline=BaselineSettings(tau_mix="tuned"),
            verification=VerificationConfig(unbiasedness_rounds=100),
        )

    def test_defaults(self):
        config = ExperimentConfig()
        self.assertEqual(config.methods, ("sentinel", "active", "uniform", "classical"))
        self.assertEqual(config.budgets, (1500.0, 3000.0, 6000.0, 12000.0, 24000.0))
        self.assertEqual(config.dataset.n, 60000)
        self.assertEqual(config.verification.coverage_n, 1000)
        self.assertFalse(config.uses_file)
        self.assertTrue(config.model().is_canonical)

    def test_dict_roundtrip(self):
        restored = ExperimentConfig.from_dict(json.loads(json.dumps(self.config.to_dict())))
        self.assertEqual(restored, self.config)
        self.assertEqual(restored.budgets, (50.0, 100.0))
        self.assertEqual(restored.baseline.tau_mix, "tuned")

    def test_digest(self):
        self.assertEqual(self.config.digest(), self.config.with_overrides(output_dir="elsewhere").digest())
        self.assertNotEqual(self.config.digest(), self.config.with_overrides(seed=1).digest())
        self.assertEqual(self.config.with_overrides(seed=7).seed, 7)

    def test_unknown_keys(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict({"budget": [1.0]})
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict({"dataset": {"size": 10}})
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict({"baseline": {"effort": 0.8, "mix": 0.3}})

    def test_invalid_values(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig(methods=("sentinel", "oracle"))
        with self.assertRaises(ConfigError):
            ExperimentConfig(methods=("sentinel", "sentinel"))
        with self.assertRaises(ConfigError):
            ExperimentConfig(budgets=(200.0, 100.0))
        with self.assertRaises(ConfigError):
            ExperimentConfig(rho=1.0)
        with self.assertRaises(ConfigError):
            ExperimentConfig(cost_mode="per_round")
        with self.assertRaises(ConfigError):
            ExperimentConfig(effort_model={"utility": {"family": "exponential"}})
        with self.assertRaises(ConfigError):
            BaselineSettings(tau_mix="auto")
        with self.assertRaises(ConfigError):
            VerificationConfig(coverage_rounds=0)


def test_load_config(tmp_path):
    filepath = tmp_path / "config.json"
    filepath.write_text(json.dumps({"replications": 5, "budgets": [10, 20], "dataset": {"n": 100}}))
    config = load_config(filepath)
    assert config.replications == 5
    assert config.dataset.n == 100
    assert config.budgets == (10.0, 20.0)


def test_load_config_errors(tmp_path):
    filepath = tmp_path / "config.json"
    filepath.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(filepath)
    filepath.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(filepath)


def test_dataset_section_keeps_campaign_size(tmp_path):
    filepath = tmp_path / "config.json"
    filepath.write_text(json.dumps({"dataset": {"alpha": 2.0, "beta": 2.0}}))
    config = load_config(filepath)
    assert config.dataset.n == 60000
    assert config.dataset.alpha == 2.0
