import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from os import PathLike
from typing import TYPE_CHECKING, Any, Optional, Union

import numpy as np

from .effort import EffortModel, sentinel_effort
from .exceptions import (
    DataError,
    DomainError,
    FamilyError,
    InfeasibleBudgetError,
    InfeasibleError,
    InfiniteObjectiveError,
)
from .optimize import golden_section_search
from .payments import COST_MODES, SentinelScheme, expected_cost, per_sample_cost

if TYPE_CHECKING:
    from .simulate import Dataset

logger = logging.getLogger(__name__)

RHO_EPSILON = 1e-4
GOLDEN_TOL = 1e-8
DEFAULT_PI_MIN = 1e-4
TAU_STRATEGIES = ("column", "binary-calibrated", "residual-oracle")


@dataclass(frozen=True, eq=False)
class DesignProblem:
    """
    Inputs of a budget-constrained design.

    Parameters
    ----------
    tau : np.ndarray
        Per-instance conditional squared prediction error, nonnegative with
        at least one positive entry.
    budget : float
        Total expected budget B.
    w0 : float, optional
        Overhead paid per sampled instance.
    k : float, optional
        Operational cost of the sentinel mechanism.
    model : EffortModel, optional
        The agent's model.
    cost_mode : str, optional
        ``"aggregate"`` or ``"per_sentinel"``.
    pi_min : float, optional
        Sampling probability given to instances with zero ``tau``.
    tau_strategy : str, optional
        How ``tau`` was obtained, carried into the design's metadata.
    """
    tau: np.ndarray
    budget: float
    w0: float = 0.0
    k: float = 0.0
    model: EffortModel = field(default_factory=EffortModel)
    cost_mode: str = "aggregate"
    pi_min: float = DEFAULT_PI_MIN
    tau_strategy: str = "supplied"

    def __post_init__(self):
        tau = np.atleast_1d(np.asarray(self.tau, dtype=float))
        if tau.ndim != 1 or len(tau) == 0:
            raise DomainError("tau must be a nonempty 1D array!")
        if not np.all(np.isfinite(tau)) or np.any(tau < 0):
            raise DomainError("tau must be finite and nonnegative!")
        if not np.any(tau > 0):
            raise DomainError("At least one tau must be positive!")
        object.__setattr__(self, "tau", tau)
        if not np.isfinite(self.budget) or self.budget <= 0:
            raise DomainError(f"Budget must be positive, got {self.budget}!")
        if self.w0 < 0 or self.k < 0:
            raise DomainError("Costs w0 and k must be nonnegative!")
        if self.cost_mode not in COST_MODES:
            raise DomainError(f"Unknown cost mode '{self.cost_mode}'!")
        if not 0 < self.pi_min <= 1:
            raise DomainError("pi_min must lie in (0, 1]!")

    @property
    def n(self) -> int:
        return len(self.tau)

    def scheme(self, rho: float, bonus: Union[float, np.ndarray]) -> SentinelScheme:
        return SentinelScheme(rho=rho, bonus=bonus, w0=self.w0, k=self.k, cost_mode=self.cost_mode)


@dataclass(frozen=True, eq=False)
class SamplingDesign:
    """
    Per-instance sampling probabilities together with the incentive they come with.

    Sentinel designs carry a ``scheme``; baseline designs carry a pinned
    effort and a per-label cost instead, and behave as ``rho = 0``.
    """
    pi: np.ndarray
    efforts: np.ndarray
    model: EffortModel
    budget: float
    method: str
    scheme: Optional[SentinelScheme] = None
    label_cost: Optional[float] = None
    objective_value: float = float("nan")
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        pi = np.atleast_1d(np.asarray(self.pi, dtype=float))
        efforts = np.atleast_1d(np.asarray(self.efforts, dtype=float))
        if pi.shape != efforts.shape:
            raise DomainError("pi and efforts must be aligned!")
        if np.any(pi < 0) or np.any(pi > 1):
            raise DomainError("Sampling probabilities must lie in [0, 1]!")
        if (self.scheme is None) == (self.label_cost is None):
            raise DomainError("A design carries either a sentinel scheme or a label cost!")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "efforts", efforts)

    @property
    def n(self) -> int:
        return len(self.pi)

    @property
    def rho(self) -> float:
        return self.scheme.rho if self.scheme is not None else 0.0

    @property
    def is_sentinel(self) -> bool:
        return self.scheme is not None

    def correction_probabilities(self) -> np.ndarray:
        return np.asarray(self.model.q(self.efforts), dtype=float)

    def bonuses(self) -> np.ndarray:
        if self.scheme is None:
            return np.zeros(self.n)
        return self.scheme.bonus_for(self.n)

    def expected_cost(self) -> float:
        if self.scheme is not None:
            return expected_cost(self.scheme, self.pi, self.efforts, self.model)
        return float(self.label_cost * np.sum(self.pi))

    def subset(self, mask: np.ndarray) -> "SamplingDesign":
        """
        Restrict the design to the instances selected by a boolean mask.

        The budget is kept as is; it no longer binds on the restriction.
        """
        mask = np.asarray(mask, dtype=bool)
        scheme = self.scheme
        if scheme is not None and not scheme.constant_bonus:
            scheme = replace(scheme, bonus=scheme.bonus[mask])
        return replace(
            self,
            pi=self.pi[mask],
            efforts=self.efforts[mask],
            scheme=scheme,
            objective_value=float("nan"),
        )

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "budget": self.budget,
            "rho": self.rho,
            "scheme": None if self.scheme is None else self.scheme.to_dict(),
            "label_cost": self.label_cost,
            "pi": self.pi.tolist(),
            "efforts": self.efforts.tolist(),
            "objective_value": None if np.isnan(self.objective_value) else self.objective_value,
            "expected_cost": self.expected_cost(),
            "model": self.model.to_config(),
            "metadata": self.metadata,
        }

    @classmethod
    def from_json_dict(cls, data: dict[str, Any]) -> "SamplingDesign":
        objective = data.get("objective_value")
        return cls(
            pi=np.asarray(data["pi"], dtype=float),
            efforts=np.asarray(data["efforts"], dtype=float),
            model=EffortModel.from_config(data["model"]),
            budget=float(data["budget"]),
            method=data["method"],
            scheme=None if data.get("scheme") is None else SentinelScheme.from_dict(data["scheme"]),
            label_cost=data.get("label_cost"),
            objective_value=float("nan") if objective is None else float(objective),
            metadata=dict(data.get("metadata", {})),
        )

    def digest(self) -> str:
        payload = json.dumps(self.to_json_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def save(self, filepath: Union[str, PathLike]) -> None:
        with open(filepath, "w") as f:
            json.dump(self.to_json_dict(), f, indent=2)

    @classmethod
    def load(cls, filepath: Union[str, PathLike]) -> "SamplingDesign":
        with open(filepath) as f:
            return cls.from_json_dict(json.load(f))


def weighted_objective(design: SamplingDesign, tau: np.ndarray) -> float:
    """
    Design-dependent part of the estimator's asymptotic variance.

    Parameters
    ----------
    design : SamplingDesign
        The design.
    tau : np.ndarray
        Per-instance conditional squared prediction error, aligned with the design.

    Returns
    -------
    float
        ``mean(tau / ((1 - rho) * pi * q(e)))``; instances with zero ``tau``
        contribute nothing.

    Raises
    ------
    InfiniteObjectiveError
        If an instance with positive ``tau`` has ``pi * q(e) = 0``.
    """
    tau = np.asarray(tau, dtype=float)
    if tau.shape != design.pi.shape:
        raise DomainError(f"tau has {len(tau)} entries for a design over {design.n} instances!")
    exposure = (1.0 - design.rho) * design.pi * design.correction_probabilities()
    blind = (tau > 0) & (exposure <= 0)
    if np.any(blind):
        raise InfiniteObjectiveError(int(np.flatnonzero(blind)[0]))
    terms = np.zeros_like(tau)
    active = tau > 0
    terms[active] = tau[active] / exposure[active]
    return float(np.mean(terms))


def water_fill(
        weights: np.ndarray,
        sampling_budget: float,
        unit_costs: Union[float, np.ndarray] = 1.0,
        pi_min: float = DEFAULT_PI_MIN
) -> np.ndarray:
    """
    Sampling probabilities proportional to ``weights``, capped at 1, spending
    ``sampling_budget``.

    Instances with zero weight receive ``pi_min``. The rest get
    ``min(1, lam * w_i)`` where ``lam`` makes ``sum(unit_costs * pi)`` equal the
    budget; the scale is re-solved over the uncapped instances until no new
    cap appears. When the budget affords sampling every positive-weight
    instance, all of them get probability 1 and the budget does not bind.

    Parameters
    ----------
    weights : np.ndarray
        Nonnegative proportionality weights.
    sampling_budget : float
        Budget available for sampling.
    unit_costs : float or np.ndarray, optional
        Expected cost of querying each instance, positive.
    pi_min : float, optional
        Floor for zero-weight instances.

    Returns
    -------
    np.ndarray
        The probabilities.

    Raises
    ------
    InfeasibleBudgetError
        If the budget does not cover the floor of the zero-weight instances.
    """
    weights = np.asarray(weights, dtype=float)
    costs = np.broadcast_to(np.asarray(unit_costs, dtype=float), weights.shape).astype(float)
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise DomainError("Weights must be finite and nonnegative!")
    if np.any(costs <= 0):
        raise DomainError("Unit costs must be positive!")

    pi = np.zeros_like(weights)
    zero = weights == 0
    pi[zero] = pi_min
    remaining = sampling_budget - float(np.sum(costs[zero] * pi_min))
    if remaining <= 0:
        raise InfeasibleBudgetError(sampling_budget, float(np.sum(costs[zero] * pi_min)))

    positive = ~zero
    if float(np.sum(costs[positive])) <= remaining:
        pi[positive] = 1.0
        logger.warning("Budget affords sampling every instance; it does not bind.")
        return pi

    capped = np.zeros_like(positive)
    while True:
        free = positive & ~capped
        lam = (remaining - float(np.sum(costs[capped]))) / float(np.sum(costs[free] * weights[free]))
        newly_capped = free & (lam * weights >= 1.0)
        if not np.any(newly_capped):
            break
        capped |= newly_capped
    pi[capped] = 1.0
    pi[free] = lam * weights[free]
    return pi


def _sampling_budget(problem: DesignProblem, scheme: SentinelScheme) -> float:
    available = problem.budget - scheme.fixed_cost
    if available <= 0:
        raise InfeasibleBudgetError(problem.budget, scheme.fixed_cost)
    return available


def design_fixed_rho_b(
        problem: DesignProblem,
        rho: float,
        b: Union[float, np.ndarray],
        method: str = "fixed-rho-b"
) -> SamplingDesign:
    """
    Optimal sampling probabilities for a fixed auditing rate and bonus.

    With a constant bonus the probabilities are proportional to ``sqrt(tau)``;
    for a per-instance bonus they are proportional to
    ``sqrt(tau / (q(e) * cost))``. The budget binds unless every instance can
    be sampled.

    Parameters
    ----------
    problem : DesignProblem
        The design inputs.
    rho : float
        Auditing rate.
    b : float or np.ndarray
        Constant bonus or per-instance schedule.

    Returns
    -------
    SamplingDesign
        The design.

    Raises
    ------
    InfeasibleBudgetError
        If ``B <= rho * k`` in the aggregate cost mode.
    InfeasibleError
        If the bonus induces zero effort on some instance.
    """
    scheme = problem.scheme(rho, b)
    efforts = scheme.efforts(problem.model, problem.n)
    q = np.asarray(problem.model.q(efforts), dtype=float)
    if np.any(q <= 0):
        raise InfeasibleError(f"Bonus {b} at rho={rho} induces no effort; labels are never corrected!")
    unit = per_sample_cost(scheme, efforts, problem.model)
    if np.any(unit <= 0):
        raise InfeasibleError("Queries cost nothing; the design is unbounded!")
    available = _sampling_budget(problem, scheme)

    if scheme.constant_bonus:
        weights = np.sqrt(problem.tau)
    else:
        weights = np.sqrt(problem.tau / (q * unit))
    pi = water_fill(weights, available, unit, problem.pi_min)
    design = SamplingDesign(
        pi=pi,
        efforts=efforts,
        model=problem.model,
        budget=problem.budget,
        method=method,
        scheme=scheme,
        metadata={"tau_strategy": problem.tau_strategy},
    )
    design = replace(design, objective_value=weighted_objective(design, problem.tau))
    logger.info(
        "%s design: rho=%.6g, sum(pi)=%.6g, expected cost=%.6g of %.6g",
        method, rho, float(np.sum(pi)), design.expected_cost(), problem.budget
    )
    return design


def _require_family(model: EffortModel, operation: str, identity_utility: bool) -> None:
    if not (model.has_linear_correction and model.has_quadratic_cost):
        raise FamilyError(operation, "linear correction and quadratic cost")
    if identity_utility and not model.has_identity_utility:
        raise FamilyError(operation, "linear correction, quadratic cost and identity utility")


def _rho_upper(problem: DesignProblem, cap: float = 1.0) -> float:
    upper = min(1.0, cap) - RHO_EPSILON
    if problem.cost_mode == "aggregate" and problem.k > 0:
        upper = min(upper, problem.budget / problem.k - RHO_EPSILON)
    return upper


def _criterion(problem: DesignProblem, rho: float, b: float) -> float:
    """Scalar design criterion of a constant bonus; proportional to the objective at the optimal pi."""
    scheme = problem.scheme(rho, b)
    e = sentinel_effort(rho, b, problem.model)
    q = float(problem.model.q(e))
    if q <= 0:
        return np.finfo(float).max
    unit = float(per_sample_cost(scheme, np.array([e]), problem.model)[0])
    return unit / ((1.0 - rho) * q * (problem.budget - scheme.fixed_cost))


def fixed_b_criterion(problem: DesignProblem, rho: float, b: float) -> float:
    """
    The auditing-rate criterion of a fixed bonus under linear correction and
    quadratic cost: ``(rho**2 * b * mu(b) / kappa + w0) / ((1 - rho) * rho * (B - rho * k))``,
    evaluated with the per-sentinel cost term when that mode is selected.
    """
    return _criterion(problem, rho, b) * float(problem.model.mu(b)) / problem.model.cost.kappa


def design_fixed_b(problem: DesignProblem, b: float) -> SamplingDesign:
    """
    Optimal auditing rate and sampling probabilities for a fixed bonus.

    The auditing rate minimizes :func:`fixed_b_criterion` by golden-section
    search on ``(eps, min(1 - eps, B / k - eps))``, further capped where the
    effort saturates at 1 since the criterion only grows beyond that point.

    Raises
    ------
    FamilyError
        Unless the model has linear correction and quadratic cost.
    InfeasibleError
        If no auditing rate is feasible.
    """
    _require_family(problem.model, "design_fixed_b", identity_utility=False)
    if not b > 0:
        raise DomainError("Bonus must be positive!")
    gain = float(problem.model.mu(b)) / problem.model.cost.kappa
    lower = RHO_EPSILON
    upper = _rho_upper(problem, cap=1.0 / gain)
    if upper <= lower:
        raise InfeasibleError(f"No auditing rate is feasible for bonus {b} and budget {problem.budget}!")
    rho, value = golden_section_search(lambda r: fixed_b_criterion(problem, r, b), lower, upper, tol=GOLDEN_TOL)
    logger.info("fixed-b: bonus=%.6g, rho=%.8g, criterion=%.6g", b, rho, value)
    design = design_fixed_rho_b(problem, rho, b, method="fixed-b")
    design.metadata["criterion"] = value
    return design


def fixed_rho_bonus(problem: DesignProblem, rho: float) -> float:
    """
    Cost-minimizing constant bonus at a fixed auditing rate, ``sqrt(kappa * w0) / rho``.

    Effort saturates at 1 once ``w0 >= kappa``, after which the bonus stays at
    ``kappa / rho``.
    """
    kappa = problem.model.cost.kappa
    return min(np.sqrt(kappa * problem.w0), kappa) / rho


def design_fixed_rho(problem: DesignProblem, rho: float) -> SamplingDesign:
    """
    Closed-form bonus and sampling probabilities for a fixed auditing rate.

    With ``b = sqrt(w0) / rho`` the effort is ``sqrt(w0)`` and each query costs
    ``2 * w0`` in expectation, so without caps the probabilities sum to
    ``(B - rho * k) / (2 * w0)``.

    Raises
    ------
    FamilyError
        Unless the model has linear correction, quadratic cost and identity utility.
    DomainError
        If ``w0 = 0``.
    """
    _require_family(problem.model, "design_fixed_rho", identity_utility=True)
    if not 0 < rho < 1:
        raise DomainError(f"Auditing rate must lie in (0, 1), got {rho}!")
    if problem.w0 <= 0:
        raise DomainError("The closed-form bonus needs a positive overhead w0!")
    return design_fixed_rho_b(problem, rho, fixed_rho_bonus(problem, rho), method="fixed-rho")


def design_joint(
        problem: DesignProblem,
        rho_bounds: tuple[float, float] = (RHO_EPSILON, 1.0 - RHO_EPSILON),
        grid_size: int = 40,
        max_bonus: Optional[float] = None
) -> SamplingDesign:
    """
    Jointly optimize the auditing rate and a constant bonus.

    For each auditing rate on a geometric grid the best bonus in
    ``(0, max_bonus]`` is found by golden-section search on the scalar
    criterion; the best grid cell is then refined by golden-section search
    over the profile. The bonus cap defaults to the model's ``w_max``. Under
    linear correction and quadratic cost, the profile decreases toward small
    auditing rates until the cap binds, so the optimum sits near
    ``sqrt(kappa * w0) / max_bonus``.

    Returns
    -------
    SamplingDesign
        The design at the optimal ``(rho, b)``.
    """
    max_bonus = problem.model.w_max if max_bonus is None else max_bonus
    lower, upper = rho_bounds
    upper = min(upper, _rho_upper(problem))
    if not 0 < lower < upper < 1:
        raise InfeasibleError(f"Empty auditing-rate range [{lower}, {upper}]!")

    def best_bonus(rho: float) -> tuple[float, float]:
        return golden_section_search(lambda b: _criterion(problem, rho, b), 1e-9, max_bonus, tol=GOLDEN_TOL)

    grid = np.geomspace(lower, upper, grid_size)
    profile = np.array([best_bonus(float(rho))[1] for rho in grid])
    best = int(np.argmin(profile))
    rho, _ = golden_section_search(
        lambda r: best_bonus(r)[1],
        float(grid[max(best - 1, 0)]),
        float(grid[min(best + 1, grid_size - 1)]),
        tol=GOLDEN_TOL
    )
    b, value = best_bonus(rho)
    logger.info("joint: rho=%.8g, bonus=%.8g, criterion=%.6g", rho, b, value)
    design = design_fixed_rho_b(problem, rho, b, method="joint")
    design.metadata["criterion"] = value
    return design


def uniform_design(problem: DesignProblem, effort: float, label_cost: float) -> SamplingDesign:
    """
    Constant sampling probability ``min(1, B / (n * label_cost))`` with a pinned effort.
    """
    if label_cost <= 0:
        raise DomainError("Label cost must be positive!")
    pi = np.full(problem.n, min(1.0, problem.budget / (problem.n * label_cost)))
    design = SamplingDesign(
        pi=pi,
        efforts=np.full(problem.n, effort),
        model=problem.model,
        budget=problem.budget,
        method="uniform",
        label_cost=label_cost,
        metadata={"tau_strategy": problem.tau_strategy},
    )
    return replace(design, objective_value=weighted_objective(design, problem.tau))


def active_design(
        problem: DesignProblem,
        effort: float,
        label_cost: float,
        tau_mix: float = 0.5
) -> SamplingDesign:
    """
    Active sampling baseline: ``sqrt(tau)``-proportional probabilities mixed
    with uniform sampling.

    ``pi = (1 - tau_mix) * pi_active + tau_mix * pi_uniform``; both parts
    spend the budget, so the mixture does too. ``tau_mix = 0`` is pure active
    sampling.
    """
    if not 0 <= tau_mix <= 1:
        raise DomainError(f"Mixing weight must lie in [0, 1], got {tau_mix}!")
    uniform = uniform_design(problem, effort, label_cost)
    active = water_fill(np.sqrt(problem.tau), problem.budget, label_cost, problem.pi_min)
    pi = (1.0 - tau_mix) * active + tau_mix * uniform.pi
    design = replace(uniform, pi=pi, method="active", metadata={**uniform.metadata, "tau_mix": tau_mix})
    return replace(design, objective_value=weighted_objective(design, problem.tau))


def estimate_tau(dataset: "Dataset", strategy: str) -> np.ndarray:
    """
    Per-instance estimate of the conditional squared prediction error.

    Parameters
    ----------
    dataset : Dataset
        The instances.
    strategy : str
        ``"column"`` reads the uncertainty column, ``"binary-calibrated"``
        uses ``p(1 - p)`` of a probabilistic binary prediction, and
        ``"residual-oracle"`` uses the realized ``(y_true - f)**2``, which is
        only available for synthetic data.

    Returns
    -------
    np.ndarray
        Nonnegative estimates.

    Raises
    ------
    DataError
        If the strategy needs a column the dataset lacks.
    """
    if strategy not in TAU_STRATEGIES:
        raise DomainError(f"Unknown tau strategy '{strategy}'; choose from {TAU_STRATEGIES}!")
    if strategy == "column":
        if dataset.uncertainty is None:
            raise DataError("Dataset has no uncertainty column!")
        tau = np.asarray(dataset.uncertainty, dtype=float)
    elif strategy == "binary-calibrated":
        if dataset.task != "binary":
            raise DataError("The binary-calibrated strategy needs a binary task!")
        p = np.asarray(dataset.prediction, dtype=float)
        tau = p * (1.0 - p)
    else:
        tau = (np.asarray(dataset.y_true, dtype=float) - np.asarray(dataset.prediction, dtype=float)) ** 2
    if np.any(tau < 0):
        raise DataError("Uncertainty scores must be nonnegative!")
    logger.info("tau estimated with the %s strategy over %d instances", strategy, len(tau))
    return tau
