import logging
from dataclasses import dataclass
from typing import Any, Optional, Union

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .design import SamplingDesign
from .effort import EffortModel
from .exceptions import DegeneracyError, DomainError
from .optimize import damped_newton
from .simulate import Dataset, RoundOutcomes

logger = logging.getLogger(__name__)

POSITIVITY_FLOOR = 1e-10
CLASSICAL_POLE_TOL = 1e-6
COVER_RTOL = 1e-12


def normal_quantile(alpha: float) -> float:
    """Two-sided standard normal critical value ``z_{1 - alpha / 2}``."""
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}!")
    return float(norm.ppf(1.0 - alpha / 2.0))


@dataclass(frozen=True)
class EstimateReport:
    method: str
    point: float
    variance: float
    ci: tuple[float, float]
    alpha: float
    n: int
    realized_cost: Optional[float] = None
    design_digest: Optional[str] = None

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "point": self.point,
            "variance": self.variance,
            "ci": [self.ci[0], self.ci[1]],
            "alpha": self.alpha,
            "n": self.n,
            "realized_cost": self.realized_cost,
            "design_digest": self.design_digest,
        }


@dataclass(frozen=True)
class MeanEstimate:
    """
    A point estimate with its confidence interval.

    ``variance`` is the per-observation variance of the influence terms, so
    the interval is ``point +/- z * sqrt(variance / n)``. For odds ratios it is
    instead the sampling variance of the log odds ratio.
    """
    point: float
    variance: float
    ci_low: float
    ci_high: float
    n: int
    method: str
    alpha: float = 0.05

    @property
    def width(self) -> float:
        return self.ci_high - self.ci_low

    @property
    def standard_error(self) -> float:
        return float(np.sqrt(self.variance / self.n))

    def covers(self, value: float) -> bool:
        # the slack absorbs rounding in the point estimate
        slack = COVER_RTOL * max(1.0, abs(value))
        return self.ci_low - slack <= value <= self.ci_high + slack

    def to_report(self, realized_cost: Optional[float] = None, design_digest: Optional[str] = None) -> EstimateReport:
        return EstimateReport(
            method=self.method,
            point=self.point,
            variance=self.variance,
            ci=(self.ci_low, self.ci_high),
            alpha=self.alpha,
            n=self.n,
            realized_cost=realized_cost,
            design_digest=design_digest,
        )


def _summarize(terms: np.ndarray, alpha: float, method: str) -> MeanEstimate:
    n = len(terms)
    point = float(np.mean(terms))
    variance = float(np.var(terms, ddof=1)) if n > 1 else 0.0
    half_width = normal_quantile(alpha) * np.sqrt(variance / n)
    return MeanEstimate(
        point=point,
        variance=variance,
        ci_low=point - half_width,
        ci_high=point + half_width,
        n=n,
        method=method,
        alpha=alpha,
    )


def _check_alignment(dataset: Dataset, outcomes: RoundOutcomes, n_design: int) -> None:
    if not outcomes.aligned_with(dataset):
        raise DomainError("Outcomes are not aligned with the dataset!")
    if n_design != len(dataset):
        raise DomainError(f"Design covers {n_design} instances but the dataset has {len(dataset)}!")


def residual_weights(
        outcomes: RoundOutcomes,
        rho: float,
        pi: np.ndarray,
        q: np.ndarray
) -> np.ndarray:
    """
    Inverse-probability weights ``xi * zeta / ((1 - rho) * pi * q(e))`` of the residuals.

    Raises
    ------
    DegeneracyError
        If any ``pi * q(e)`` falls below the positivity floor.
    """
    if not 0 <= rho < 1:
        raise DomainError(f"Auditing rate must lie in [0, 1), got {rho}!")
    exposure = np.asarray(pi, dtype=float) * np.asarray(q, dtype=float)
    if np.any(exposure < POSITIVITY_FLOOR):
        position = int(np.argmin(exposure))
        raise DegeneracyError(
            f"pi * q(e) = {exposure[position]:.3g} at position {position} is below the positivity floor!"
        )
    observed = outcomes.sampled & outcomes.regular
    return np.where(observed, 1.0 / ((1.0 - rho) * exposure), 0.0)


def influence_terms(
        prediction: np.ndarray,
        outcomes: RoundOutcomes,
        rho: float,
        pi: np.ndarray,
        q: np.ndarray
) -> np.ndarray:
    """
    Per-instance terms ``f + (Y - f) * weight`` of the residual-corrected mean.

    Unlabelled and sentinel instances contribute ``f`` alone.
    """
    weights = residual_weights(outcomes, rho, pi, q)
    residual = np.where(weights > 0, outcomes.label - prediction, 0.0)
    return prediction + residual * weights


def estimate_mean(
        dataset: Dataset,
        outcomes: RoundOutcomes,
        design: SamplingDesign,
        model: Optional[EffortModel] = None,
        alpha: float = 0.05
) -> MeanEstimate:
    """
    Incentive-aware estimate of the mean ground truth.

    Each instance contributes ``f(X) + (Y - f(X)) * xi * zeta / ((1 - rho) * pi * q(e))``
    with the effort implied by the design's incentives. The variance is the
    sample variance of these terms (denominator ``n - 1``, zero when ``n = 1``).

    Parameters
    ----------
    dataset : Dataset
        The instances.
    outcomes : RoundOutcomes
        Outcomes of a round run with ``design``.
    design : SamplingDesign
        The design.
    model : EffortModel, optional
        The agent's model; defaults to the design's.
    alpha : float, optional
        One minus the confidence level.

    Returns
    -------
    MeanEstimate
        The estimate.

    Raises
    ------
    DegeneracyError
        If some ``pi * q(e)`` is below the positivity floor.
    """
    _check_alignment(dataset, outcomes, design.n)
    model = design.model if model is None else model
    q = np.asarray(model.q(design.efforts), dtype=float)
    terms = influence_terms(dataset.prediction, outcomes, design.rho, design.pi, q)
    return _summarize(terms, alpha, design.method)


def estimate_mean_active_baseline(
        dataset: Dataset,
        outcomes: RoundOutcomes,
        pi: np.ndarray,
        effort: float,
        tau_mix: float,
        model: EffortModel,
        alpha: float = 0.05,
        method: str = "active"
) -> MeanEstimate:
    """
    Residual-corrected estimate for labels collected without sentinels at a pinned effort.

    Residuals are divided by ``pi * q(effort)``. ``tau_mix`` is the mixing
    weight already folded into ``pi``; it only tags the result.
    """
    pi = np.broadcast_to(np.asarray(pi, dtype=float), dataset.prediction.shape)
    _check_alignment(dataset, outcomes, len(pi))
    if not 0 <= tau_mix <= 1:
        raise DomainError(f"Mixing weight must lie in [0, 1], got {tau_mix}!")
    q = np.full(len(pi), float(model.q(effort)))
    terms = influence_terms(dataset.prediction, outcomes, 0.0, pi, q)
    return _summarize(terms, alpha, method)


def estimate_mean_uniform(
        dataset: Dataset,
        outcomes: RoundOutcomes,
        pi_unif: float,
        effort: float,
        model: EffortModel,
        alpha: float = 0.05
) -> MeanEstimate:
    return estimate_mean_active_baseline(
        dataset, outcomes, np.full(len(dataset), pi_unif), effort, 1.0, model, alpha, method="uniform"
    )


def estimate_mean_classical(
        outcomes: RoundOutcomes,
        pi_unif: float,
        effort: float,
        model: EffortModel,
        alpha: float = 0.05
) -> MeanEstimate:
    """
    Horvitz-Thompson estimate from noisy binary labels, debiased for symmetric noise.

    Each instance contributes ``(xi / pi) * (Y + q - 1) / (2q - 1)``.

    Raises
    ------
    DegeneracyError
        If ``q(effort)`` is within 1e-6 of 0.5, or ``pi_unif`` is not positive.
    """
    q = float(model.q(effort))
    if abs(q - 0.5) < CLASSICAL_POLE_TOL:
        raise DegeneracyError(f"Correction probability {q} is too close to 1/2!")
    if not 0 < pi_unif <= 1:
        raise DegeneracyError(f"Uniform sampling probability {pi_unif} must lie in (0, 1]!")
    labels = np.where(outcomes.sampled, outcomes.label, 0.0)
    terms = np.where(outcomes.sampled, (labels + q - 1.0) / (2.0 * q - 1.0), 0.0) / pi_unif
    return _summarize(terms, alpha, "classical")


def estimate_odds_ratio(group_a: MeanEstimate, group_b: MeanEstimate, alpha: float = 0.05) -> MeanEstimate:
    """
    Odds ratio of two independent probability estimates.

    The interval comes from the delta method on the log odds ratio and is
    exponentiated; ``variance`` holds the variance of the log odds ratio.

    Raises
    ------
    DegeneracyError
        If either estimate lies outside (0, 1).
    """
    pa, pb = group_a.point, group_b.point
    for p in (pa, pb):
        if not 0 < p < 1:
            raise DegeneracyError(f"Probability estimate {p} must lie strictly between 0 and 1!")
    log_ratio = np.log(pa / (1.0 - pa)) - np.log(pb / (1.0 - pb))
    variance = (
        group_a.variance / group_a.n / (pa * (1.0 - pa)) ** 2
        + group_b.variance / group_b.n / (pb * (1.0 - pb)) ** 2
    )
    half_width = normal_quantile(alpha) * np.sqrt(variance)
    return MeanEstimate(
        point=float(np.exp(log_ratio)),
        variance=float(variance),
        ci_low=float(np.exp(log_ratio - half_width)),
        ci_high=float(np.exp(log_ratio + half_width)),
        n=group_a.n + group_b.n,
        method=f"{group_a.method}:odds_ratio",
        alpha=alpha,
    )


class SquaredLoss:
    """
    Squared loss ``(y - x @ theta)**2 / 2``.

    Without features it is the loss of the mean.
    """
    def __init__(self, features: Optional[np.ndarray] = None, n: Optional[int] = None):
        if features is None:
            if n is None:
                raise DomainError("SquaredLoss needs features or a sample size!")
            features = np.ones((n, 1))
        self.features = np.asarray(features, dtype=float)
        if self.features.ndim == 1:
            self.features = self.features[:, None]

    @property
    def dimension(self) -> int:
        return self.features.shape[1]

    def value(self, theta: np.ndarray, y: np.ndarray) -> np.ndarray:
        return 0.5 * (y - self.features @ theta) ** 2

    def gradient(self, theta: np.ndarray, y: np.ndarray) -> np.ndarray:
        return -(y - self.features @ theta)[:, None] * self.features

    def hessian(self, theta: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.einsum("ij,ik->ijk", self.features, self.features)


class LogisticLoss:
    """
    Logistic loss ``log(1 + exp(x @ theta)) - y * x @ theta`` for labels in [0, 1].

    An intercept column is prepended unless ``intercept=False``.
    """
    def __init__(self, features: np.ndarray, intercept: bool = True):
        features = np.asarray(features, dtype=float)
        if features.ndim == 1:
            features = features[:, None]
        if intercept:
            features = np.column_stack([np.ones(len(features)), features])
        self.features = features

    @property
    def dimension(self) -> int:
        return self.features.shape[1]

    def value(self, theta: np.ndarray, y: np.ndarray) -> np.ndarray:
        z = self.features @ theta
        return np.logaddexp(0.0, z) - y * z

    def gradient(self, theta: np.ndarray, y: np.ndarray) -> np.ndarray:
        return (expit(self.features @ theta) - y)[:, None] * self.features

    def hessian(self, theta: np.ndarray, y: np.ndarray) -> np.ndarray:
        s = expit(self.features @ theta)
        return (s * (1.0 - s))[:, None, None] * np.einsum("ij,ik->ijk", self.features, self.features)


LossSpec = Union[SquaredLoss, LogisticLoss]


class WeightedLoss:
    """
    Residual-corrected empirical loss
    ``mean(l(theta, f) + (l(theta, Y) - l(theta, f)) * w)``, with its gradient,
    Hessian and per-instance gradient terms.
    """
    def __init__(self, loss: LossSpec, prediction: np.ndarray, label: np.ndarray, weights: np.ndarray):
        self.loss = loss
        self.prediction = np.asarray(prediction, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self.label = np.where(self.weights > 0, label, self.prediction)

    def value(self, theta: np.ndarray) -> float:
        base = self.loss.value(theta, self.prediction)
        return float(np.mean(base + (self.loss.value(theta, self.label) - base) * self.weights))

    def gradient_terms(self, theta: np.ndarray) -> np.ndarray:
        base = self.loss.gradient(theta, self.prediction)
        return base + (self.loss.gradient(theta, self.label) - base) * self.weights[:, None]

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        return np.mean(self.gradient_terms(theta), axis=0)

    def hessian(self, theta: np.ndarray) -> np.ndarray:
        base = self.loss.hessian(theta, self.prediction)
        terms = base + (self.loss.hessian(theta, self.label) - base) * self.weights[:, None, None]
        return np.mean(terms, axis=0)


@dataclass(frozen=True, eq=False)
class MEstimate:
    point: np.ndarray
    sandwich: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    n: int
    gradient_norm: float
    iterations: int
    method: str
    alpha: float = 0.05

    @property
    def width(self) -> np.ndarray:
        return self.ci_high - self.ci_low


def estimate_m(
        dataset: Dataset,
        outcomes: RoundOutcomes,
        design: SamplingDesign,
        model: Optional[EffortModel] = None,
        loss: Optional[LossSpec] = None,
        alpha: float = 0.05,
        max_iter: int = 100
) -> MEstimate:
    """
    Incentive-aware M-estimate with sandwich covariance.

    Minimizes the residual-corrected empirical loss by damped Newton until the
    gradient norm is at most 1e-9, or at most 1e-7 once the loss stops
    decreasing in floating point. The covariance is ``H^-1 M H^-1`` with
    ``H`` the Hessian of the weighted loss at the estimate and ``M`` the
    sample covariance of the per-instance weighted gradients.

    Parameters
    ----------
    dataset, outcomes, design : Dataset, RoundOutcomes, SamplingDesign
        As in :func:`estimate_mean`.
    model : EffortModel, optional
        The agent's model; defaults to the design's.
    loss : SquaredLoss or LogisticLoss, optional
        The loss; defaults to the squared loss of the mean.
    alpha : float, optional
        One minus the confidence level.

    Returns
    -------
    MEstimate
        Estimate, sandwich covariance, per-coordinate intervals and solver diagnostics.

    Raises
    ------
    OptimizationError
        If Newton's method does not converge.
    DegeneracyError
        If the Hessian is singular or not positive definite.
    """
    _check_alignment(dataset, outcomes, design.n)
    model = design.model if model is None else model
    loss = SquaredLoss(n=len(dataset)) if loss is None else loss
    if loss.features.shape[0] != len(dataset):
        raise DomainError("Loss features are not aligned with the dataset!")
    q = np.asarray(model.q(design.efforts), dtype=float)
    weights = residual_weights(outcomes, design.rho, design.pi, q)
    objective = WeightedLoss(loss, dataset.prediction, outcomes.label, weights)

    result = damped_newton(
        objective.value, objective.gradient, objective.hessian,
        np.zeros(loss.dimension), gtol=1e-9, max_iter=max_iter
    )
    theta = result.x
    hessian = objective.hessian(theta)
    hessian = 0.5 * (hessian + hessian.T)
    if np.min(np.linalg.eigvalsh(hessian)) <= 0:
        raise DegeneracyError("Weighted-loss Hessian is not positive definite at the estimate!")
    h_inv = np.linalg.inv(hessian)
    n = len(dataset)
    meat = np.atleast_2d(np.cov(objective.gradient_terms(theta), rowvar=False, ddof=1)) if n > 1 \
        else np.zeros((loss.dimension, loss.dimension))
    sandwich = h_inv @ meat @ h_inv
    sandwich = 0.5 * (sandwich + sandwich.T)
    half_width = normal_quantile(alpha) * np.sqrt(np.clip(np.diag(sandwich), 0.0, None) / n)
    logger.debug("M-estimate converged in %d iterations, |g|=%.3e", result.iterations, result.gradient_norm)
    return MEstimate(
        point=theta,
        sandwich=sandwich,
        ci_low=theta - half_width,
        ci_high=theta + half_width,
        n=n,
        gradient_norm=result.gradient_norm,
        iterations=result.iterations,
        method=design.method,
        alpha=alpha,
    )


def analytic_influence_variance(
        prediction: np.ndarray,
        y_true: np.ndarray,
        rho: float,
        pi: np.ndarray,
        q: np.ndarray,
        weights: Optional[np.ndarray] = None
) -> float:
    """
    Exact variance of one influence term on a discrete population.

    The AI outputs ``f(X)`` and is wrong exactly when ``y_true != f(X)``; a
    wrong output is corrected with probability ``q``. An instance drawn with
    probability ``weights`` (uniform by default) is labelled and regular with
    probability ``(1 - rho) * pi``; the influence term is computed on every
    branch and the variance taken over all of them.
    """
    f = np.asarray(prediction, dtype=float)
    y = np.asarray(y_true, dtype=float)
    pi = np.asarray(pi, dtype=float)
    q = np.asarray(q, dtype=float)
    weights = np.full(len(f), 1.0 / len(f)) if weights is None else np.asarray(weights, dtype=float)
    if abs(float(np.sum(weights)) - 1.0) > 1e-12:
        raise DomainError("Population weights must sum to 1!")
    exposure = (1.0 - rho) * pi
    scale = exposure * q

    first, second = 0.0, 0.0
    for i in range(len(f)):
        if y[i] == f[i]:
            branches = [(1.0, f[i])]
        else:
            if scale[i] <= 0:
                raise DegeneracyError(f"Instance {i} has a wrong prediction but pi * q(e) = 0!")
            branches = [
                (1.0 - exposure[i], f[i]),
                (scale[i], f[i] + (y[i] - f[i]) / scale[i]),
                (exposure[i] * (1.0 - q[i]), f[i]),
            ]
        for probability, term in branches:
            first += weights[i] * probability * term
            second += weights[i] * probability * term ** 2
    return float(second - first ** 2)
