import logging
from dataclasses import dataclass
from os import PathLike
from typing import Any, Optional, Union

import numpy as np
import pandas as pd

from .effort import EffortModel, implied_efforts
from .exceptions import DomainError, InfeasibleError

logger = logging.getLogger(__name__)

COST_MODES = ("aggregate", "per_sentinel")


def _check_probability_open(name: str, value: float) -> None:
    if not np.isfinite(value) or not 0 < value < 1:
        raise DomainError(f"{name} must lie in (0, 1), got {value}!")


def _check_effort(e: float) -> None:
    if not np.isfinite(e) or not 0 <= e <= 1:
        raise DomainError(f"Effort must lie in [0, 1], got {e}!")


@dataclass(frozen=True)
class LinearAccuracyPayment:
    """
    Pay ``reward_per_correct`` for every audited output that is correct.

    Each task is audited independently with probability ``check_probability``.
    """
    reward_per_correct: float
    check_probability: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.reward_per_correct) or self.reward_per_correct < 0:
            raise DomainError("Reward per correct output must be nonnegative!")
        if not 0 < self.check_probability <= 1:
            raise DomainError("Check probability must lie in (0, 1]!")

    def correct_probability(self, p: float, e: float, model: EffortModel) -> float:
        return 1.0 - p + p * float(model.q(e))

    def expected_payment(self, p: float, e: float, model: EffortModel) -> float:
        return self.reward_per_correct * self.check_probability * self.correct_probability(p, e, model)


@dataclass(frozen=True, eq=False)
class SentinelScheme:
    """
    Sentinel auditing scheme.

    A sampled task becomes a sentinel with probability ``rho``; on a sentinel
    the AI output is forced to be wrong and the agent earns ``bonus`` if the
    submitted label is nevertheless correct. Every sampled task pays the
    overhead ``w0``.

    Parameters
    ----------
    rho : float
        Auditing rate in (0, 1).
    bonus : float or np.ndarray
        A constant bonus or a per-instance schedule, nonnegative.
    w0 : float, optional
        Overhead paid per sampled instance.
    k : float, optional
        Operational cost of the sentinel mechanism.
    cost_mode : str, optional
        ``"aggregate"`` charges ``rho * k`` once per round; ``"per_sentinel"``
        charges ``k`` for each sentinel task, so every query costs ``rho * k``
        more in expectation.
    """
    rho: float
    bonus: Union[float, np.ndarray]
    w0: float = 0.0
    k: float = 0.0
    cost_mode: str = "aggregate"

    def __post_init__(self):
        _check_probability_open("Auditing rate", self.rho)
        bonus = np.asarray(self.bonus, dtype=float)
        if bonus.ndim > 1:
            raise DomainError("Bonus schedule must be a scalar or a 1D array!")
        if not np.all(np.isfinite(bonus)) or np.any(bonus < 0):
            raise DomainError("Bonus must be finite and nonnegative!")
        if bonus.ndim == 0:
            object.__setattr__(self, "bonus", float(bonus))
        else:
            object.__setattr__(self, "bonus", bonus)
        for name in ("w0", "k"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise DomainError(f"{name} must be finite and nonnegative, got {value}!")
        if self.cost_mode not in COST_MODES:
            raise DomainError(f"Unknown cost mode '{self.cost_mode}'; choose from {COST_MODES}!")

    @property
    def constant_bonus(self) -> bool:
        return np.ndim(self.bonus) == 0

    def bonus_for(self, n: int) -> np.ndarray:
        """Bonus schedule broadcast to ``n`` instances."""
        if self.constant_bonus:
            return np.full(n, self.bonus)
        if len(self.bonus) != n:
            raise DomainError(f"Bonus schedule has {len(self.bonus)} entries for {n} instances!")
        return np.asarray(self.bonus)

    def efforts(self, model: EffortModel, n: int) -> np.ndarray:
        return implied_efforts(self.rho, self.bonus_for(n), model)

    @property
    def fixed_cost(self) -> float:
        """Cost charged regardless of the sample, ``rho * k`` in aggregate mode."""
        return self.rho * self.k if self.cost_mode == "aggregate" else 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "rho": self.rho,
            "bonus": self.bonus if self.constant_bonus else self.bonus.tolist(),
            "w0": self.w0,
            "k": self.k,
            "cost_mode": self.cost_mode,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SentinelScheme":
        bonus = data["bonus"]
        return cls(
            rho=float(data["rho"]),
            bonus=np.asarray(bonus, dtype=float) if isinstance(bonus, list) else float(bonus),
            w0=float(data.get("w0", 0.0)),
            k=float(data.get("k", 0.0)),
            cost_mode=data.get("cost_mode", "aggregate"),
        )


def agent_payoff_linear(scheme: LinearAccuracyPayment, model: EffortModel, p: float, e: float) -> float:
    """
    Expected payoff of a risk-neutral agent paid per correct output.

    Returns ``R * s * (1 - p + p * q(e)) - c(e)`` with ``s`` the check probability.
    """
    _check_probability_open("AI error probability", p)
    _check_effort(e)
    return scheme.expected_payment(p, e, model) - float(model.c(e))


def agent_payoff_sentinel(scheme: SentinelScheme, model: EffortModel, x_bonus: float, e: float) -> float:
    """
    Expected payoff of an agent on one sampled task under sentinel audits.

    Returns ``rho * q(e) * mu(b) + mu(w0) - c(e)``. The overhead term does not
    depend on effort.
    """
    _check_effort(e)
    if x_bonus < 0:
        raise DomainError("Bonus must be nonnegative!")
    return (
        scheme.rho * float(model.q(e)) * float(model.mu(x_bonus))
        + float(model.mu(scheme.w0))
        - float(model.c(e))
    )


def required_linear_reward(
        e_min: float,
        p: float,
        model: EffortModel,
        check_probability: float = 1.0
) -> float:
    """
    Smallest per-correct reward whose best response reaches ``e_min``.

    From the binding first-order condition ``R * s * p * q'(e) = c'(e)``.

    Raises
    ------
    DomainError
        If ``e_min`` or ``p`` lies outside (0, 1).
    InfeasibleError
        If ``q'(e_min) = 0``, so no reward moves the agent.
    """
    _check_probability_open("Target effort", e_min)
    _check_probability_open("AI error probability", p)
    if not 0 < check_probability <= 1:
        raise DomainError("Check probability must lie in (0, 1]!")
    slope = float(model.dq(e_min))
    if slope <= 0:
        raise InfeasibleError(f"q'(e) vanishes at e={e_min}; no accuracy reward sustains this effort!")
    return float(model.dc(e_min)) / (check_probability * p * slope)


def required_linear_payment(
        e_min: float,
        p: float,
        model: EffortModel,
        check_probability: float = 1.0
) -> float:
    """
    Minimal expected payment per task sustaining effort ``e_min`` under the
    linear accuracy scheme.

    Parameters
    ----------
    e_min : float
        Target effort in (0, 1).
    p : float
        Probability that the AI errs, in (0, 1).
    model : EffortModel
        The agent's model.
    check_probability : float, optional
        Probability that a task is audited, by default 1.

    Returns
    -------
    float
        ``R* * s * (1 - p + p * q(e_min))``.
    """
    reward = required_linear_reward(e_min, p, model, check_probability)
    return LinearAccuracyPayment(reward, check_probability).expected_payment(p, e_min, model)


def collapse_curve(
        e_min: float,
        model: EffortModel,
        p_grid: Union[list[float], np.ndarray],
        check_probability: float = 1.0
) -> pd.DataFrame:
    """
    Required expected payment as the AI error probability shrinks.

    Parameters
    ----------
    e_min : float
        Effort to sustain.
    model : EffortModel
        The agent's model.
    p_grid : list[float] or np.ndarray
        Strictly positive, strictly decreasing AI error probabilities.

    Returns
    -------
    pd.DataFrame
        Columns ``p`` and ``required_payment``, one row per grid point.
    """
    p_grid = np.asarray(p_grid, dtype=float)
    if p_grid.ndim != 1 or len(p_grid) == 0:
        raise DomainError("p_grid must be a nonempty 1D sequence!")
    if np.any(p_grid <= 0):
        raise DomainError("p_grid must be strictly positive!")
    if np.any(np.diff(p_grid) >= 0):
        raise DomainError("p_grid must be strictly decreasing!")
    payments = [required_linear_payment(e_min, float(p), model, check_probability) for p in p_grid]
    return pd.DataFrame({"p": p_grid, "required_payment": payments})


def loglog_slope(curve: pd.DataFrame) -> float:
    """Least-squares slope of log(required payment) against log(1/p)."""
    return float(np.polyfit(np.log(1.0 / curve["p"].to_numpy()), np.log(curve["required_payment"].to_numpy()), 1)[0])


def write_collapse_csv(curve: pd.DataFrame, filepath: Union[str, PathLike]) -> None:
    curve.to_csv(filepath, columns=["p", "required_payment"], index=False)


def _aligned(scheme: SentinelScheme, efforts: np.ndarray, pi: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray]:
    efforts = np.atleast_1d(np.asarray(efforts, dtype=float))
    if pi is not None and len(pi) != len(efforts):
        raise DomainError(f"Got {len(pi)} probabilities but {len(efforts)} efforts!")
    if np.any(efforts < 0) or np.any(efforts > 1):
        raise DomainError("Efforts must lie in [0, 1]!")
    return scheme.bonus_for(len(efforts)), efforts


def per_sample_cost(scheme: SentinelScheme, efforts: np.ndarray, model: EffortModel) -> np.ndarray:
    """
    Expected principal cost of querying each instance.

    ``rho * b(x) * q(e(x)) + w0``, plus ``rho * k`` in the per-sentinel cost mode.
    """
    bonus, efforts = _aligned(scheme, efforts)
    cost = scheme.rho * bonus * model.q(efforts) + scheme.w0
    if scheme.cost_mode == "per_sentinel":
        cost = cost + scheme.rho * scheme.k
    return cost


def expected_cost(
        scheme: SentinelScheme,
        pi: np.ndarray,
        efforts: np.ndarray,
        model: EffortModel
) -> float:
    """
    Expected total cost of a sentinel design.

    In the aggregate cost mode this is
    ``sum_i (rho * b(x_i) * q(e_i) + w0) * pi_i + rho * k``.

    Parameters
    ----------
    scheme : SentinelScheme
        The payment scheme.
    pi : np.ndarray
        Sampling probabilities in [0, 1].
    efforts : np.ndarray
        Efforts in [0, 1], aligned with ``pi``.
    model : EffortModel
        The agent's model.

    Returns
    -------
    float
        The expected cost.

    Raises
    ------
    DomainError
        If the arrays have different lengths or leave their ranges.
    """
    pi = np.atleast_1d(np.asarray(pi, dtype=float))
    _aligned(scheme, efforts, pi)
    if np.any(pi < 0) or np.any(pi > 1):
        raise DomainError("Sampling probabilities must lie in [0, 1]!")
    return float(np.sum(per_sample_cost(scheme, efforts, model) * pi) + scheme.fixed_cost)


def accuracy_label_cost(effort: float, mean_error_prob: float, model: EffortModel, w0: float = 0.0) -> float:
    """
    Per-label cost of a baseline that induces ``effort`` through an accuracy reward.

    The overhead ``w0`` plus the expected linear-accuracy payment at the
    population mean AI error probability.
    """
    return w0 + required_linear_payment(effort, mean_error_prob, model)


def symmetric_label_cost(effort: float, model: EffortModel, w0: float = 0.0) -> float:
    """
    Per-label cost of a baseline whose label is correct with probability ``q(e)``.

    Without an AI output to fall back on, the linear accuracy scheme pays as if
    the AI always erred: ``R* = c'(e) / q'(e)`` and the expected payment is
    ``R* * q(e)``.

    Raises
    ------
    DomainError
        If ``effort`` lies outside (0, 1).
    InfeasibleError
        If ``q'(effort) = 0``.
    """
    _check_probability_open("Target effort", effort)
    slope = float(model.dq(effort))
    if slope <= 0:
        raise InfeasibleError(f"q'(e) vanishes at e={effort}; no accuracy reward sustains this effort!")
    scheme = LinearAccuracyPayment(float(model.dc(effort)) / slope)
    return w0 + scheme.expected_payment(1.0, effort, model)
