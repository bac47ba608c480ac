import json
import logging
from dataclasses import dataclass, field, replace
from os import PathLike
from pathlib import Path
from typing import Any, Callable, Optional, Union

import numpy as np
from joblib import Parallel, delayed
from scipy.special import expit

from .config import ExperimentConfig
from .design import (
    DesignProblem,
    SamplingDesign,
    design_fixed_b,
    design_fixed_rho,
    design_fixed_rho_b,
    weighted_objective,
)
from .effort import EffortModel, sentinel_effort
from .estimators import (
    LogisticLoss,
    WeightedLoss,
    analytic_influence_variance,
    estimate_m,
    estimate_mean,
    residual_weights,
)
from .exceptions import DegeneracyError, OptimizationError
from .harness import population_mean, run_cell
from .payments import SentinelScheme, collapse_curve, expected_cost, loglog_slope, per_sample_cost
from .simulate import Dataset, SyntheticConfig, binary_error_probability, generate_synthetic, simulate_round

logger = logging.getLogger(__name__)

COVERAGE_BAND = (0.93, 0.97)


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    statistics: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class VerificationReport:
    suites: list[SuiteResult]

    @property
    def passed(self) -> bool:
        return all(suite.passed for suite in self.suites)

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "passed": self.passed,
            "suites": [
                {"name": suite.name, "passed": suite.passed, "statistics": suite.statistics}
                for suite in self.suites
            ],
        }

    def write(self, output_dir: Union[str, PathLike]) -> None:
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        with open(output_dir / "verification.json", "w") as f:
            json.dump(self.to_json_dict(), f, indent=2, sort_keys=True)


def _in_band(value: float) -> bool:
    return COVERAGE_BAND[0] <= value <= COVERAGE_BAND[1]


def collapse_suite(config: ExperimentConfig) -> SuiteResult:
    """Required accuracy payment grows like 1/p as the AI error probability p shrinks."""
    model = config.model()
    p_grid = np.geomspace(1e-1, 1e-4, 40)
    slopes = {
        str(e_min): loglog_slope(collapse_curve(e_min, model, p_grid))
        for e_min in (0.3, 0.5, 0.8)
    }
    passed = all(abs(slope - 1.0) <= 0.02 for slope in slopes.values())
    return SuiteResult("incentive_collapse", passed, {"slopes": slopes})


def sentinel_effort_suite(config: ExperimentConfig) -> SuiteResult:
    """Numerical best response matches min(1, rho * b) and is monotone."""
    model = EffortModel()
    rhos = np.linspace(0.01, 0.99, 50)
    bonuses = np.linspace(0.0, 10.0, 50)
    efforts = np.array([[sentinel_effort(rho, b, model) for b in bonuses] for rho in rhos])
    closed_form = np.minimum(1.0, np.outer(rhos, bonuses))
    max_error = float(np.max(np.abs(efforts - closed_form)))
    monotone = bool(np.all(np.diff(efforts, axis=0) >= -1e-12) and np.all(np.diff(efforts, axis=1) >= -1e-12))
    return SuiteResult(
        "sentinel_effort",
        max_error <= 1e-8 and monotone,
        {"max_error": max_error, "monotone": monotone},
    )


def fixed_b_suite(config: ExperimentConfig) -> SuiteResult:
    """Optimized auditing rate against its closed form and a fine grid search."""
    w0, b, budget = 0.01, 1.0, 10.0
    problem = DesignProblem(tau=np.ones(100), budget=budget, w0=w0, model=EffortModel())
    rho = design_fixed_b(problem, b).rho
    closed_form = (-w0 + np.sqrt(w0 * (w0 + b * b))) / (b * b)
    grid = np.arange(1e-4, 1.0 - 1e-4, 1e-5)
    criterion = (grid ** 2 * b * b + w0) / ((1.0 - grid) * grid * budget)
    grid_best = float(grid[np.argmin(criterion)])

    def at(r: float) -> float:
        return (r ** 2 * b * b + w0) / ((1.0 - r) * r * budget)

    locally_optimal = at(rho) <= min(at(rho - 0.01), at(rho + 0.01))
    statistics = {
        "rho": rho,
        "closed_form": float(closed_form),
        "grid_best": grid_best,
        "closed_form_error": float(abs(rho - closed_form)),
    }
    passed = abs(rho - closed_form) <= 1e-5 and abs(rho - grid_best) <= 1e-5 and locally_optimal
    return SuiteResult("fixed_bonus_closed_form", bool(passed), statistics)


def fixed_rho_suite(config: ExperimentConfig) -> SuiteResult:
    """Closed-form bonus costs 2 * w0 per query and the design spends the budget exactly."""
    rng = np.random.default_rng(config.seed)
    w0, rho, k, budget = 0.04, 0.1, 0.5, 2.0
    problem = DesignProblem(tau=rng.uniform(0.01, 0.25, 200), budget=budget, w0=w0, k=k, model=EffortModel())
    design = design_fixed_rho(problem, rho)
    unit = float(per_sample_cost(design.scheme, design.efforts[:1], design.model)[0])
    cost = design.expected_cost()
    statistics = {
        "bonus": float(design.scheme.bonus),
        "per_sample_cost": unit,
        "expected_cost": cost,
        "max_pi": float(np.max(design.pi)),
    }
    passed = abs(unit - 2 * w0) <= 1e-12 and abs(cost - budget) <= 1e-9 * budget and np.max(design.pi) < 1
    return SuiteResult("fixed_rho_budget_binding", bool(passed), statistics)


def variance_equivalence_suite(config: ExperimentConfig) -> SuiteResult:
    """
    On a ten-point population, exact influence variances of two designs differ
    by exactly the difference of their weighted objectives.
    """
    rng = np.random.default_rng(config.seed)
    model = EffortModel()
    n = 10
    prediction = rng.integers(0, 2, n).astype(float)
    y_true = np.where(rng.random(n) < 0.4, 1.0 - prediction, prediction)
    tau = (y_true - prediction) ** 2

    def random_design() -> SamplingDesign:
        scheme = SentinelScheme(rho=rng.uniform(0.05, 0.5), bonus=rng.uniform(0.5, 5.0), w0=0.1)
        return SamplingDesign(
            pi=rng.uniform(0.2, 1.0, n),
            efforts=scheme.efforts(model, n),
            model=model,
            budget=1.0,
            method="random",
            scheme=scheme,
        )

    def exact(design: SamplingDesign) -> float:
        return analytic_influence_variance(
            prediction, y_true, design.rho, design.pi, design.correction_probabilities()
        )

    residuals = []
    for _ in range(config.verification.design_pairs):
        first, second = random_design(), random_design()
        residuals.append(
            abs((exact(first) - exact(second)) - (weighted_objective(first, tau) - weighted_objective(second, tau)))
        )
    max_residual = float(np.max(residuals))
    return SuiteResult("variance_equivalence", max_residual <= 1e-10, {"max_residual": max_residual})


def _equal_cost_perturbations(
        design: SamplingDesign,
        tau: np.ndarray,
        rng: np.random.Generator,
        count: int
) -> tuple[float, int]:
    best = weighted_objective(design, tau)
    smallest_gap, tried = np.inf, 0
    for _ in range(20 * count):
        if tried == count:
            break
        pi = design.pi * np.exp(0.2 * rng.standard_normal(design.n))
        pi *= np.sum(design.pi) / np.sum(pi)
        if np.max(pi) > 1:
            continue
        tried += 1
        smallest_gap = min(smallest_gap, weighted_objective(replace(design, pi=pi), tau) - best)
    return float(smallest_gap), tried


def _bonus_perturbations(
        design: SamplingDesign,
        tau: np.ndarray,
        rng: np.random.Generator,
        count: int
) -> tuple[float, int]:
    """Move the bonus and rescale the probabilities so the expected cost stays put."""
    model = design.model
    best = weighted_objective(design, tau)
    unit = float(per_sample_cost(design.scheme, design.efforts[:1], model)[0])
    smallest_gap, tried = np.inf, 0
    for _ in range(count):
        scheme = replace(design.scheme, bonus=float(design.scheme.bonus * np.exp(0.3 * rng.standard_normal())))
        efforts = scheme.efforts(model, design.n)
        pi = design.pi * unit / float(per_sample_cost(scheme, efforts[:1], model)[0])
        if np.max(pi) > 1:
            continue
        tried += 1
        candidate = replace(design, pi=pi, efforts=efforts, scheme=scheme)
        smallest_gap = min(smallest_gap, weighted_objective(candidate, tau) - best)
    return float(smallest_gap), tried


def optimality_suite(config: ExperimentConfig) -> SuiteResult:
    """Random equal-cost perturbations never beat the closed-form designs."""
    rng = np.random.default_rng(config.seed)
    count = config.verification.perturbations
    tau = rng.uniform(0.01, 0.25, 50)
    model = EffortModel()
    designs = {
        "fixed-rho-b": design_fixed_rho_b(DesignProblem(tau, 2.0, w0=0.05, model=model), 0.2, 2.0),
        "fixed-b": design_fixed_b(DesignProblem(tau, 0.3, w0=0.01, model=model), 1.0),
        "fixed-rho": design_fixed_rho(DesignProblem(tau, 2.0, w0=0.04, model=model), 0.1),
    }
    checks = {name: _equal_cost_perturbations(design, tau, rng, count) for name, design in designs.items()}
    checks["fixed-rho bonus"] = _bonus_perturbations(designs["fixed-rho"], tau, rng, count)
    statistics = {name: {"smallest_gap": gap, "perturbations": tried} for name, (gap, tried) in checks.items()}
    passed = all(tried > 0 and gap >= -1e-12 for gap, tried in checks.values())
    return SuiteResult("design_optimality", passed, statistics)


def _unbiasedness_point(synthetic: SyntheticConfig, rho: float, w0: float, budget: float, seed: int) -> float:
    dataset = generate_synthetic(synthetic, seed)
    problem = DesignProblem(tau=dataset.uncertainty, budget=budget, w0=w0, model=EffortModel())
    design = design_fixed_rho(problem, rho)
    outcomes = simulate_round(dataset, design, seed=seed)
    return estimate_mean(dataset, outcomes, design).point


def unbiasedness_suite(config: ExperimentConfig) -> SuiteResult:
    """Standardized bias of the sentinel estimator over repeated rounds, five scenarios."""
    n = config.verification.unbiasedness_n
    rounds = config.verification.unbiasedness_rounds
    w0 = 0.25
    budget = 2 * w0 * n / 4
    scenarios = {
        "rho=0.05": (SyntheticConfig(n=n, alpha=2.0, beta=2.0), 0.05),
        "rho=0.2": (SyntheticConfig(n=n, alpha=2.0, beta=2.0), 0.2),
        "miscalibrated": (SyntheticConfig(n=n, alpha=2.0, beta=2.0, calibration="miscalibrated", distortion=2.0), 0.1),
        "skewed scores": (SyntheticConfig(n=n, alpha=4.5, beta=0.5), 0.1),
        "continuous": (SyntheticConfig(n=n, task="continuous"), 0.1),
    }
    statistics, passed = {}, True
    for name, (synthetic, rho) in scenarios.items():
        points = np.array(Parallel(n_jobs=config.n_jobs)(
            delayed(_unbiasedness_point)(synthetic, rho, w0, budget, config.seed + r) for r in range(rounds)
        ))
        target = population_mean(synthetic)
        spread = float(np.std(points, ddof=1)) if rounds > 1 else 0.0
        z = abs(float(np.mean(points)) - target) / (spread / np.sqrt(rounds)) if spread > 0 else 0.0
        statistics[name] = {"mean": float(np.mean(points)), "target": target, "standardized_bias": z}
        passed &= z <= 3.0
    return SuiteResult("unbiasedness", bool(passed), statistics)


def coverage_suite(config: ExperimentConfig) -> SuiteResult:
    """Empirical coverage of every method at every configured budget."""
    n = config.verification.coverage_n
    campaign = replace(
        config,
        dataset=replace(config.dataset, n=n),
        replications=config.verification.coverage_rounds,
        estimand="mean",
        n_jobs=1,
    )
    results = Parallel(n_jobs=config.n_jobs)(
        delayed(run_cell)(campaign, method, budget) for method in campaign.methods for budget in campaign.budgets
    )
    statistics = {method: {} for method in campaign.methods}
    for result in results:
        statistics[result.method][str(result.budget)] = {"coverage": result.coverage, "error": result.error}
    passed = all(result.error is None and _in_band(result.coverage) for result in results)
    return SuiteResult("coverage", passed, statistics)


def _logistic_dataset(n: int, seed: int, theta: np.ndarray) -> tuple[Dataset, np.ndarray]:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    score = expit(theta[0] + theta[1] * x)
    y_true = (rng.random(n) < score).astype(float)
    dataset = Dataset(
        ids=np.arange(n),
        prediction=score,
        ai_error_prob=binary_error_probability(score, y_true),
        y_true=y_true,
        y_false=1.0 - y_true,
        uncertainty=score * (1.0 - score),
    )
    return dataset, x


def _logistic_round(n: int, seed: int, theta: np.ndarray) -> Optional[np.ndarray]:
    """Per-coordinate coverage of one logistic round, or None when the fit fails."""
    dataset, x = _logistic_dataset(n, seed, theta)
    problem = DesignProblem(tau=dataset.uncertainty, budget=0.5 * n / 4, w0=0.25, model=EffortModel())
    design = design_fixed_rho(problem, 0.1)
    outcomes = simulate_round(dataset, design, seed=seed)
    try:
        estimate = estimate_m(dataset, outcomes, design, loss=LogisticLoss(x))
    except (OptimizationError, DegeneracyError) as exc:
        logger.warning("logistic round with seed %d failed: %s", seed, exc.message)
        return None
    return (estimate.ci_low <= theta) & (theta <= estimate.ci_high)


def m_estimation_suite(config: ExperimentConfig) -> SuiteResult:
    """Weighted-loss gradient check, squared-loss reduction and logistic coverage."""
    theta_true = np.array([-0.5, 1.0])
    n = config.verification.m_estimation_n
    dataset, x = _logistic_dataset(n, config.seed, theta_true)
    problem = DesignProblem(tau=dataset.uncertainty, budget=0.5 * n / 4, w0=0.25, model=EffortModel())
    design = design_fixed_rho(problem, 0.1)
    outcomes = simulate_round(dataset, design, seed=config.seed)

    weights = residual_weights(outcomes, design.rho, design.pi, design.correction_probabilities())
    objective = WeightedLoss(LogisticLoss(x), dataset.prediction, outcomes.label, weights)
    rng = np.random.default_rng(config.seed)
    h = 1e-6
    gradient_error = 0.0
    for _ in range(50):
        theta = rng.standard_normal(2)
        fd = np.array([
            (objective.value(theta + h * unit) - objective.value(theta - h * unit)) / (2 * h)
            for unit in np.eye(2)
        ])
        analytic = objective.gradient(theta)
        gradient_error = max(gradient_error, float(np.linalg.norm(fd - analytic) / max(np.linalg.norm(analytic), 1.0)))

    squared = estimate_m(dataset, outcomes, design)
    mean = estimate_mean(dataset, outcomes, design)
    reduction_error = max(
        abs(float(squared.point[0]) - mean.point),
        abs(float(squared.sandwich[0, 0]) - mean.variance) / max(1.0, mean.variance),
    )

    rounds = Parallel(n_jobs=config.n_jobs)(
        delayed(_logistic_round)(n, config.seed + r, theta_true)
        for r in range(config.verification.m_estimation_rounds)
    )
    # a failed fit counts as a miss on every coordinate
    covered = np.array([np.zeros(2, dtype=bool) if hit is None else hit for hit in rounds])
    coverage = covered.mean(axis=0)
    statistics = {
        "gradient_relative_error": gradient_error,
        "squared_loss_reduction_error": float(reduction_error),
        "logistic_coverage": coverage.tolist(),
        "failed_rounds": sum(hit is None for hit in rounds),
    }
    passed = gradient_error <= 1e-5 and reduction_error <= 1e-8 and all(_in_band(c) for c in coverage)
    return SuiteResult("m_estimation", bool(passed), statistics)


def fidelity_suite(config: ExperimentConfig) -> SuiteResult:
    """Simulated sentinel frequency, label accuracy by AI error bin and bonus rate."""
    n = config.verification.fidelity_n
    model = EffortModel()
    dataset = generate_synthetic(SyntheticConfig(n=n, alpha=1.0, beta=1.0), config.seed)
    scheme = SentinelScheme(rho=0.2, bonus=2.5, w0=0.1)
    efforts = scheme.efforts(model, n)
    design = SamplingDesign(
        pi=np.ones(n),
        efforts=efforts,
        model=model,
        budget=expected_cost(scheme, np.ones(n), efforts, model),
        method="fidelity",
        scheme=scheme,
    )
    outcomes = simulate_round(dataset, design, seed=config.seed)
    q = float(model.q(efforts[0]))

    sentinel_share = outcomes.n_sentinels / outcomes.n_sampled
    sentinel_z = abs(sentinel_share - scheme.rho) / np.sqrt(scheme.rho * (1 - scheme.rho) / outcomes.n_sampled)

    regular = outcomes.sampled & outcomes.regular
    correct = outcomes.label == dataset.y_true
    expected = 1.0 - dataset.ai_error_prob * (1.0 - q)
    bins = np.minimum((dataset.ai_error_prob * 10).astype(int), 9)
    worst_bin_z = 0.0
    for b in range(10):
        members = regular & (bins == b)
        if not np.any(members):
            continue
        spread = np.sqrt(np.sum(expected[members] * (1.0 - expected[members]))) / np.sum(members)
        gap = abs(np.mean(correct[members]) - np.mean(expected[members]))
        worst_bin_z = max(worst_bin_z, float(gap / spread) if spread > 0 else (0.0 if gap == 0 else np.inf))

    sentinels = outcomes.sentinel
    bonus_rate = float(np.mean(outcomes.bonus_paid[sentinels] > 0))
    bonus_z = abs(bonus_rate - q) / np.sqrt(q * (1 - q) / np.sum(sentinels))
    statistics = {
        "sentinel_share": sentinel_share,
        "sentinel_z": float(sentinel_z),
        "worst_accuracy_bin_z": worst_bin_z,
        "bonus_rate": bonus_rate,
        "bonus_z": float(bonus_z),
    }
    passed = sentinel_z <= 3 and worst_bin_z <= 3 and bonus_z <= 3
    return SuiteResult("simulator_fidelity", bool(passed), statistics)


SUITES: dict[str, Callable[[ExperimentConfig], SuiteResult]] = {
    "incentive_collapse": collapse_suite,
    "sentinel_effort": sentinel_effort_suite,
    "fixed_bonus_closed_form": fixed_b_suite,
    "fixed_rho_budget_binding": fixed_rho_suite,
    "variance_equivalence": variance_equivalence_suite,
    "design_optimality": optimality_suite,
    "simulator_fidelity": fidelity_suite,
    "unbiasedness": unbiasedness_suite,
    "coverage": coverage_suite,
    "m_estimation": m_estimation_suite,
}


def verify_theory(config: ExperimentConfig, suites: Optional[list[str]] = None) -> VerificationReport:
    """
    Run the theory-verification suites.

    Parameters
    ----------
    config : ExperimentConfig
        Supplies the seed, worker count, Monte Carlo sizes and the campaign
        settings used by the coverage suite.
    suites : list[str], optional
        Names of the suites to run; all by default.

    Returns
    -------
    VerificationReport
        One result per suite with its measured statistics.
    """
    names = list(SUITES) if suites is None else suites
    unknown = [name for name in names if name not in SUITES]
    if unknown:
        raise ValueError(f"Unknown verification suites {unknown}; choose from {list(SUITES)}!")
    results = []
    for name in names:
        result = SUITES[name](config)
        logger.info("suite %s: %s %s", name, "passed" if result.passed else "FAILED", result.statistics)
        results.append(result)
    return VerificationReport(results)
