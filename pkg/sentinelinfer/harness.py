import json
import logging
from dataclasses import dataclass, field, replace
from os import PathLike
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.special import expit, logit
from scipy.stats import beta as beta_distribution
from sklearn.isotonic import IsotonicRegression

from .config import METHODS, TAU_MIX_GRID, ExperimentConfig
from .design import (
    DesignProblem,
    SamplingDesign,
    active_design,
    design_fixed_b,
    design_fixed_rho,
    design_fixed_rho_b,
    design_joint,
    estimate_tau,
    uniform_design,
)
from .effort import EffortModel
from .estimators import (
    MeanEstimate,
    estimate_mean,
    estimate_mean_active_baseline,
    estimate_mean_classical,
    estimate_mean_uniform,
    estimate_odds_ratio,
)
from .exceptions import DataError, DegeneracyError, DomainError, ExtrapolationError, SentinelInferError
from .grid import ResultGrid
from .payments import accuracy_label_cost, symmetric_label_cost
from .simulate import (
    Dataset,
    RoundOutcomes,
    SyntheticConfig,
    generate_synthetic,
    ingest_csv,
    realized_cost,
    simulate_round,
)

logger = logging.getLogger(__name__)

GRID_NAMES = ("width", "width_se", "coverage", "cost", "failures")


def population_mean(synthetic: SyntheticConfig, group: Optional[int] = None) -> float:
    """
    Expected ground truth under the synthetic generator, overall or within a group.

    Binary tasks integrate the truth probability against the Beta score
    distribution; continuous tasks have mean zero.
    """
    if synthetic.task == "continuous":
        if group is not None:
            raise DomainError("Group means need a binary task!")
        return 0.0
    if group is not None and not synthetic.two_groups:
        raise DomainError("Group means need a two-group dataset!")

    def truth_probability(score: float) -> float:
        if synthetic.calibration == "well":
            return score
        return float(expit(synthetic.distortion * logit(score)))

    def mean_of(alpha: float) -> float:
        return float(beta_distribution.expect(truth_probability, args=(alpha, synthetic.beta)))

    shifted = synthetic.alpha + synthetic.group_shift
    if group is None:
        if synthetic.two_groups:
            return 0.5 * (mean_of(synthetic.alpha) + mean_of(shifted))
        return mean_of(synthetic.alpha)
    return mean_of(shifted if group == 1 else synthetic.alpha)


class DataSource:
    """
    Draws the dataset of each replication and knows the population target.

    Synthetic sources regenerate a fresh dataset with seed ``seed + r``; file
    sources resample the file's rows with replacement, treating the file as
    the population.
    """
    def __init__(self, config: ExperimentConfig):
        self.config = config
        if config.uses_file:
            self.population = ingest_csv(config.data_path, config.data_schema, config.task)
            self.n = config.sample_size or len(self.population)
        else:
            self.population = None
            self.n = config.dataset.n

    def draw(self, replication: int) -> Dataset:
        seed = self.config.seed + replication
        if self.population is None:
            return generate_synthetic(self.config.dataset, seed)
        rng = np.random.default_rng([self.config.seed, replication])
        rows = rng.integers(0, len(self.population), size=self.n)
        population = self.population
        return Dataset(
            ids=np.arange(self.n, dtype=np.int64),
            prediction=population.prediction[rows],
            ai_error_prob=population.ai_error_prob[rows],
            y_true=population.y_true[rows],
            y_false=population.y_false[rows],
            task=population.task,
            uncertainty=None if population.uncertainty is None else population.uncertainty[rows],
            group=None if population.group is None else population.group[rows],
            provenance={"source": population.provenance.get("source"), "replication": replication},
        )

    def _group_mean(self, group: Optional[int]) -> float:
        if self.population is not None:
            if group is None:
                return self.population.true_mean
            if self.population.group is None:
                raise DataError("The odds ratio needs a group column!")
            return float(np.mean(self.population.y_true[self.population.group == group]))

        return population_mean(self.config.dataset, group)

    def target(self, estimand: str) -> float:
        """Population value of the estimand."""
        if estimand == "mean":
            return self._group_mean(None)
        p1, p0 = self._group_mean(1), self._group_mean(0)
        return (p1 / (1.0 - p1)) / (p0 / (1.0 - p0))


@dataclass(frozen=True)
class CellContext:
    """Quantities fixed across the replications of one (method, budget) cell."""
    method: str
    budget: float
    model: EffortModel
    rho: Optional[float] = None
    bonus: Optional[float] = None
    label_cost: Optional[float] = None
    tau_mix: Optional[float] = None


def _problem(config: ExperimentConfig, dataset: Dataset, budget: float, model: EffortModel) -> DesignProblem:
    return DesignProblem(
        tau=estimate_tau(dataset, config.tau_strategy),
        budget=budget,
        w0=config.w0,
        k=config.k,
        model=model,
        cost_mode=config.cost_mode,
        tau_strategy=config.tau_strategy,
    )


def _sentinel_incentive(config: ExperimentConfig, budget: float, n: int, model: EffortModel) -> tuple[float, Optional[float]]:
    # the auditing rate and bonus of these designs do not depend on tau
    if config.sentinel_design == "fixed-rho":
        return config.rho, None
    problem = DesignProblem(
        tau=np.ones(n), budget=budget, w0=config.w0, k=config.k, model=model, cost_mode=config.cost_mode
    )
    if config.sentinel_design == "fixed-b":
        return design_fixed_b(problem, config.bonus).rho, config.bonus
    design = design_joint(problem)
    return design.rho, float(design.scheme.bonus)


def _baseline_label_cost(config: ExperimentConfig, base: Dataset, model: EffortModel, method: str) -> float:
    if config.baseline.payment == "overhead-only":
        if config.w0 <= 0:
            raise DomainError("Overhead-only baselines need a positive w0!")
        return config.w0
    if _label_channel(method) == "symmetric":
        return symmetric_label_cost(config.baseline.effort, model, config.w0)
    mean_error = float(np.mean(base.ai_error_prob))
    return accuracy_label_cost(config.baseline.effort, mean_error, model, config.w0)


def tune_tau_mix(
        config: ExperimentConfig,
        base: Dataset,
        budget: float,
        label_cost: float,
        model: EffortModel
) -> float:
    """
    Mixing weight with the smallest variance estimate on a pilot half of the data.

    The pilot uses the even ids and half the budget; ties go to the smaller weight.
    """
    pilot = base.subset(base.ids % 2 == 0)
    problem = _problem(config, pilot, 0.5 * budget, model)
    effort = config.baseline.effort
    variances = []
    for tau_mix in TAU_MIX_GRID:
        design = active_design(problem, effort, label_cost, tau_mix)
        outcomes = simulate_round(pilot, design, model, seed=config.seed)
        estimate = estimate_mean_active_baseline(pilot, outcomes, design.pi, effort, tau_mix, model, config.alpha)
        variances.append(estimate.variance)
    best = TAU_MIX_GRID[int(np.argmin(variances))]
    logger.info("tuned tau_mix=%.1f at budget %.6g", best, budget)
    return best


def _cell_context(config: ExperimentConfig, base: Dataset, method: str, budget: float) -> CellContext:
    model = config.model()
    if method == "sentinel":
        rho, bonus = _sentinel_incentive(config, budget, len(base), model)
        return CellContext(method, budget, model, rho=rho, bonus=bonus)
    label_cost = _baseline_label_cost(config, base, model, method)
    tau_mix = None
    if method == "active":
        tau_mix = config.baseline.tau_mix
        if tau_mix == "tuned":
            tau_mix = tune_tau_mix(config, base, budget, label_cost, model)
    return CellContext(method, budget, model, label_cost=label_cost, tau_mix=tau_mix)


def _design(config: ExperimentConfig, context: CellContext, dataset: Dataset) -> SamplingDesign:
    problem = _problem(config, dataset, context.budget, context.model)
    effort = config.baseline.effort
    if context.method == "sentinel":
        if context.bonus is None:
            design = design_fixed_rho(problem, context.rho)
        else:
            design = design_fixed_rho_b(problem, context.rho, context.bonus, method=config.sentinel_design)
    elif context.method == "active":
        design = active_design(problem, effort, context.label_cost, context.tau_mix)
    else:
        design = uniform_design(problem, effort, context.label_cost)
    return replace(design, method=context.method)


def _estimate_mean(
        config: ExperimentConfig,
        context: CellContext,
        dataset: Dataset,
        outcomes: RoundOutcomes,
        design: SamplingDesign
) -> MeanEstimate:
    effort = config.baseline.effort
    if context.method == "sentinel":
        return estimate_mean(dataset, outcomes, design, context.model, config.alpha)
    if context.method == "active":
        return estimate_mean_active_baseline(
            dataset, outcomes, design.pi, effort, context.tau_mix, context.model, config.alpha
        )
    if context.method == "uniform":
        return estimate_mean_uniform(dataset, outcomes, float(design.pi[0]), effort, context.model, config.alpha)
    if dataset.task != "binary":
        raise DomainError("The classical estimator needs binary labels!")
    return estimate_mean_classical(outcomes, float(design.pi[0]), effort, context.model, config.alpha)


def _label_channel(method: str) -> str:
    return "symmetric" if method == "classical" else "assisted"


def _estimate(
        config: ExperimentConfig,
        context: CellContext,
        dataset: Dataset,
        outcomes: RoundOutcomes,
        design: SamplingDesign
) -> MeanEstimate:
    if config.estimand == "mean":
        return _estimate_mean(config, context, dataset, outcomes, design)
    if dataset.group is None:
        raise DataError("The odds ratio needs a group column!")
    by_group = []
    for group in (1, 0):
        mask = dataset.group == group
        by_group.append(
            _estimate_mean(config, context, dataset.subset(mask), outcomes.subset(mask), design.subset(mask))
        )
    return estimate_odds_ratio(by_group[0], by_group[1], config.alpha)


def run_replication(
        config: ExperimentConfig,
        source: DataSource,
        context: CellContext,
        replication: int
) -> tuple[MeanEstimate, float]:
    """
    One labelling round of a cell: draw the data, design, label, estimate.

    Returns the estimate and the realized cost.
    """
    dataset = source.draw(replication)
    design = _design(config, context, dataset)
    outcomes = simulate_round(
        dataset, design, context.model, seed=config.seed + replication, label_channel=_label_channel(context.method)
    )
    return _estimate(config, context, dataset, outcomes, design), realized_cost(outcomes, design.scheme)


def build_design(config: ExperimentConfig, dataset: Dataset, method: str, budget: float) -> SamplingDesign:
    """
    The design a campaign would use for ``method`` at ``budget`` on this dataset.

    Raises
    ------
    DomainError
        For an unknown method.
    """
    if method not in METHODS:
        raise DomainError(f"Unknown method '{method}'; choose from {METHODS}!")
    context = _cell_context(config, dataset, method, budget)
    return _design(config, context, dataset)


def label_round(dataset: Dataset, design: SamplingDesign, seed: int) -> RoundOutcomes:
    """Simulate one round through the label channel the design's method assumes."""
    return simulate_round(dataset, design, seed=seed, label_channel=_label_channel(design.method))


def estimate_round(
        config: ExperimentConfig,
        dataset: Dataset,
        outcomes: RoundOutcomes,
        design: SamplingDesign
) -> MeanEstimate:
    """Estimate the configured estimand from one round with the estimator matching the design's method."""
    if design.method not in METHODS:
        raise DomainError(f"Design method '{design.method}' has no estimator; choose from {METHODS}!")
    context = CellContext(
        design.method,
        design.budget,
        design.model,
        rho=design.rho,
        label_cost=design.label_cost,
        tau_mix=design.metadata.get("tau_mix"),
    )
    return _estimate(config, context, dataset, outcomes, design)


@dataclass(frozen=True)
class CellResult:
    method: str
    budget: float
    width: float = float("nan")
    width_se: float = float("nan")
    coverage: float = float("nan")
    cost: float = float("nan")
    failures: int = 0
    error: Optional[str] = None


def run_cell(config: ExperimentConfig, method: str, budget: float) -> CellResult:
    """
    Run every replication of one (method, budget) cell.

    Replications whose estimator is undefined are counted as failures; any
    other library error turns the whole cell into an error cell.
    """
    try:
        source = DataSource(config)
        target = source.target(config.estimand)
        context = _cell_context(config, source.draw(0), method, budget)
        widths, covered, costs = [], [], []
        failures = 0
        for replication in range(config.replications):
            try:
                estimate, cost = run_replication(config, source, context, replication)
            except DegeneracyError as exc:
                failures += 1
                logger.debug("%s at budget %.6g, replication %d: %s", method, budget, replication, exc.message)
                continue
            widths.append(estimate.width)
            covered.append(estimate.covers(target))
            costs.append(cost)
        if not widths:
            return CellResult(method, budget, failures=failures, error="every replication was degenerate")
        widths = np.asarray(widths)
        width_se = float(np.std(widths, ddof=1) / np.sqrt(len(widths))) if len(widths) > 1 else 0.0
        logger.info("cell %s @ %.6g done: width=%.5g coverage=%.3f", method, budget, np.mean(widths), np.mean(covered))
        return CellResult(
            method,
            budget,
            width=float(np.mean(widths)),
            width_se=width_se,
            coverage=float(np.mean(covered)),
            cost=float(np.mean(costs)),
            failures=failures,
        )
    except SentinelInferError as exc:
        logger.warning("cell %s @ %.6g failed: %s", method, budget, exc.message)
        return CellResult(method, budget, error=f"{type(exc).__name__}: {exc.message}")


@dataclass(frozen=True, eq=False)
class CampaignReport:
    """
    Aggregated campaign results: one :class:`ResultGrid` per metric over
    methods and budgets, the error cells, and provenance.
    """
    grids: dict[str, ResultGrid]
    errors: dict[tuple[str, float], str]
    target: float
    provenance: dict[str, Any] = field(default_factory=dict)

    @property
    def methods(self) -> list[str]:
        return list(self.grids["width"].row_labels)

    @property
    def budgets(self) -> list[float]:
        return list(self.grids["width"].column_labels)

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "provenance": self.provenance,
            "target": self.target,
            "methods": self.methods,
            "budgets": self.budgets,
            "metrics": {name: grid.to_jsonfriendly_dict() for name, grid in self.grids.items()},
            "errors": [
                {"method": method, "budget": budget, "error": message}
                for (method, budget), message in sorted(self.errors.items())
            ],
        }

    def metrics_frame(self, *names: str) -> pd.DataFrame:
        frame = None
        for name in names:
            part = self.grids[name].to_frame()
            frame = part if frame is None else frame.merge(part, on=["method", "budget"])
        return frame

    def write(self, output_dir: Union[str, PathLike], reference: str = "sentinel") -> None:
        """
        Write ``report.json``, ``widths.csv``, ``coverage.csv`` and ``budget_saved.csv``.
        """
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        with open(output_dir / "report.json", "w") as f:
            json.dump(self.to_json_dict(), f, indent=2, sort_keys=True)
        self.metrics_frame("width", "width_se").to_csv(output_dir / "widths.csv", index=False)
        self.metrics_frame("coverage", "cost").to_csv(output_dir / "coverage.csv", index=False)
        if reference in self.methods and len(self.methods) > 1:
            budget_saved_table(self, reference).to_csv(output_dir / "budget_saved.csv", index=False)
        logger.info("Campaign report written to %s", output_dir)


def run_campaign(config: ExperimentConfig) -> CampaignReport:
    """
    Run a full Monte Carlo campaign.

    Every (method, budget) cell runs ``config.replications`` labelling rounds,
    replication ``r`` using seed ``config.seed + r``. Cells run in a joblib
    worker pool of ``config.n_jobs`` workers; results do not depend on the
    pool size.

    Parameters
    ----------
    config : ExperimentConfig
        The campaign configuration.

    Returns
    -------
    CampaignReport
        Mean CI width, its standard error, coverage, mean realized cost and
        failure counts per cell.
    """
    from . import __version__

    cells = [(method, budget) for method in config.methods for budget in config.budgets]
    logger.info("Running %d cells x %d replications", len(cells), config.replications)
    results = Parallel(n_jobs=config.n_jobs)(
        delayed(run_cell)(config, method, budget) for method, budget in cells
    )

    shape = (len(config.methods), len(config.budgets))
    values = {name: np.reshape([getattr(result, name) for result in results], shape) for name in GRID_NAMES}
    grids = {
        name: ResultGrid.from_numpyarray_given_labels(list(config.methods), list(config.budgets), array, name=name)
        for name, array in values.items()
    }
    errors = {(result.method, result.budget): result.error for result in results if result.error is not None}

    return CampaignReport(
        grids=grids,
        errors=errors,
        target=DataSource(config).target(config.estimand),
        provenance={
            "config_digest": config.digest(),
            "config": config.to_dict(),
            "seeds": {"base": config.seed, "replications": config.replications},
            "version": __version__,
        },
    )


def required_budget(budgets: np.ndarray, widths: np.ndarray, target_width: float, method: str = "") -> float:
    """
    Smallest budget whose interpolated width reaches ``target_width``.

    The width curve is first made nonincreasing by isotonic regression, then
    interpolated linearly.

    Raises
    ------
    ExtrapolationError
        If the target lies outside the range of the curve.
    """
    keep = ~np.isnan(widths)
    budgets, widths = np.asarray(budgets, dtype=float)[keep], np.asarray(widths, dtype=float)[keep]
    if len(budgets) == 0:
        raise ExtrapolationError(method, target_width, float("nan"), float("nan"))
    smoothed = IsotonicRegression(increasing=False).fit(budgets, widths).predict(budgets)
    lowest, highest = float(np.min(smoothed)), float(np.max(smoothed))
    if not lowest <= target_width <= highest:
        raise ExtrapolationError(method, target_width, lowest, highest)
    j = int(np.flatnonzero(smoothed <= target_width)[0])
    if j == 0:
        return float(budgets[0])
    w_hi, w_lo = smoothed[j - 1], smoothed[j]
    return float(budgets[j - 1] + (w_hi - target_width) / (w_hi - w_lo) * (budgets[j] - budgets[j - 1]))


def budget_saved(report: CampaignReport, target_width: float, reference: str = "sentinel") -> dict[str, float]:
    """
    Percentage of budget the reference method saves against each other method
    to reach ``target_width``: ``100 * (1 - B_reference / B_baseline)``.

    Raises
    ------
    ExtrapolationError
        If the target is not bracketed by some width curve.
    """
    width = report.grids["width"]
    budgets = np.asarray(width.column_labels, dtype=float)
    ours = required_budget(budgets, width.row(reference), target_width, reference)
    return {
        method: 100.0 * (1.0 - ours / required_budget(budgets, width.row(method), target_width, method))
        for method in width.row_labels
        if method != reference
    }


def budget_saved_table(report: CampaignReport, reference: str = "sentinel") -> pd.DataFrame:
    """
    Budget savings over the widths that the reference method and the baselines reach.

    Target widths are the reference's widths on the budget grid together with
    every baseline width inside the reference's range, so curves that overlap
    only in part still yield savings. ``budget`` is what the reference needs
    for the target; savings that would need extrapolation are left empty.
    """
    width = report.grids["width"]
    budgets = np.asarray(width.column_labels, dtype=float)
    ours = width.row(reference)
    others = [method for method in width.row_labels if method != reference]
    columns = ["target_width", "budget", *(f"saved_vs_{method}" for method in others)]

    reached = ours[~np.isnan(ours)]
    if len(reached) == 0:
        return pd.DataFrame(columns=columns)
    targets = set(reached.tolist())
    for method in others:
        theirs = width.row(method)
        theirs = theirs[~np.isnan(theirs)]
        targets.update(theirs[(theirs >= reached.min()) & (theirs <= reached.max())].tolist())

    rows = []
    for target_width in sorted(targets, reverse=True):
        try:
            needed = required_budget(budgets, ours, target_width, reference)
        except ExtrapolationError:
            continue
        row = {"target_width": target_width, "budget": needed}
        for method in others:
            try:
                theirs = required_budget(budgets, width.row(method), target_width, method)
                row[f"saved_vs_{method}"] = 100.0 * (1.0 - needed / theirs)
            except ExtrapolationError:
                row[f"saved_vs_{method}"] = float("nan")
        rows.append(row)
    return pd.DataFrame(rows, columns=columns)
