import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Union

import numpy as np
from scipy.optimize import bisect, brentq

from .exceptions import ConfigError, DomainError, NumericError
from .optimize import golden_section_search

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

GRID_SIZE = 1000
FD_STEP = 1e-6
FD_RTOL = 1e-6


@dataclass(frozen=True)
class PowerCorrection:
    """
    Correction probability q(e) = e**a with 0 < a <= 1.

    ``a = 1`` is the linear correction model.
    """
    a: float = 1.0

    def __post_init__(self):
        if not 0 < self.a <= 1:
            raise DomainError(f"Correction exponent must lie in (0, 1], got {self.a}!")

    def __call__(self, e: ArrayLike) -> ArrayLike:
        return np.power(e, self.a)

    def derivative(self, e: ArrayLike) -> ArrayLike:
        if self.a == 1.0:
            return np.ones_like(np.asarray(e, dtype=float))[()]
        with np.errstate(divide="ignore"):
            return self.a * np.power(e, self.a - 1.0)

    def to_config(self) -> dict[str, Any]:
        return {"family": "power", "a": self.a}


@dataclass(frozen=True)
class PowerCost:
    """
    Effort cost c(e) = kappa * e**m / m with m >= 1 and kappa > 0.
    """
    m: float = 2.0
    kappa: float = 1.0

    def __post_init__(self):
        if self.m < 1:
            raise DomainError(f"Cost exponent must be at least 1, got {self.m}!")
        if self.kappa <= 0:
            raise DomainError(f"Cost scale must be positive, got {self.kappa}!")

    def __call__(self, e: ArrayLike) -> ArrayLike:
        return self.kappa * np.power(e, self.m) / self.m

    def derivative(self, e: ArrayLike) -> ArrayLike:
        return self.kappa * np.power(e, self.m - 1.0)

    def to_config(self) -> dict[str, Any]:
        return {"family": "power", "m": self.m, "kappa": self.kappa}


@dataclass(frozen=True)
class IdentityUtility:
    def __call__(self, w: ArrayLike) -> ArrayLike:
        return np.asarray(w, dtype=float)[()]

    def derivative(self, w: ArrayLike) -> ArrayLike:
        return np.ones_like(np.asarray(w, dtype=float))[()]

    def to_config(self) -> dict[str, Any]:
        return {"family": "identity"}


@dataclass(frozen=True)
class PowerUtility:
    """
    Risk-averse utility mu(w) = w**gamma with 0 < gamma <= 1.
    """
    gamma: float = 0.5

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise DomainError(f"Utility exponent must lie in (0, 1], got {self.gamma}!")

    def __call__(self, w: ArrayLike) -> ArrayLike:
        return np.power(w, self.gamma)

    def derivative(self, w: ArrayLike) -> ArrayLike:
        with np.errstate(divide="ignore"):
            return self.gamma * np.power(w, self.gamma - 1.0)

    def to_config(self) -> dict[str, Any]:
        return {"family": "power", "gamma": self.gamma}


@dataclass(frozen=True)
class LogUtility:
    """
    Shifted-log utility mu(w) = log(1 + w).
    """
    def __call__(self, w: ArrayLike) -> ArrayLike:
        return np.log1p(w)

    def derivative(self, w: ArrayLike) -> ArrayLike:
        return 1.0 / (1.0 + np.asarray(w, dtype=float))[()]

    def to_config(self) -> dict[str, Any]:
        return {"family": "log"}


def _build_family(section: str, spec: dict[str, Any]):
    families = {
        "correction": {"power": PowerCorrection},
        "cost": {"power": PowerCost},
        "utility": {"identity": IdentityUtility, "power": PowerUtility, "log": LogUtility},
    }
    params = dict(spec)
    name = params.pop("family", None)
    if name not in families[section]:
        raise ConfigError(
            f"Unknown {section} family '{name}'; choose from {sorted(families[section])}!"
        )
    try:
        return families[section][name](**params)
    except TypeError as exc:
        raise ConfigError(f"Bad parameters for {section} family '{name}': {exc}") from exc


def _check_shape(
        name: str,
        values: np.ndarray,
        increasing: bool,
        curvature: int,
        strict: bool = False
) -> None:
    # curvature: -1 concave, +1 convex
    scale = max(1.0, float(np.max(np.abs(values))))
    tol = 1e-12 * scale
    steps = np.diff(values)
    if increasing and (np.any(steps <= 0) if strict else np.any(steps < -tol)):
        raise DomainError(f"{name} is not {'strictly ' if strict else ''}increasing on its grid!")
    second = np.diff(values, n=2)
    if curvature < 0 and np.any(second > tol):
        raise DomainError(f"{name} is not concave on its grid!")
    if curvature > 0 and np.any(second < -tol):
        raise DomainError(f"{name} is not convex on its grid!")


def _check_derivative(name: str, func: Callable, derivative: Callable, points: np.ndarray) -> None:
    fd = (func(points + FD_STEP) - func(points - FD_STEP)) / (2 * FD_STEP)
    analytic = derivative(points)
    error = np.abs(fd - analytic) / np.maximum(np.abs(analytic), 1.0)
    if np.any(error > FD_RTOL):
        worst = int(np.argmax(error))
        raise DomainError(
            f"Derivative of {name} disagrees with finite differences at {points[worst]:.6g} "
            f"(relative error {error[worst]:.3e})!"
        )


@dataclass(frozen=True)
class EffortModel:
    """
    The agent's correction probability q, effort cost c and payment utility mu.

    The shape requirements (q nondecreasing and concave with q(1) = 1, c
    nondecreasing and convex with c(0) = 0, mu strictly increasing and
    concave on [0, w_max]) and the analytic derivatives are checked
    numerically on a 1000-point grid at construction.

    Parameters
    ----------
    correction : PowerCorrection
        The correction probability family q.
    cost : PowerCost
        The effort cost family c.
    utility : IdentityUtility | PowerUtility | LogUtility
        The payment utility family mu.
    w_max : float, optional
        Upper end of the payment range on which mu is validated.

    Raises
    ------
    DomainError
        If any family violates its shape requirements.
    """
    correction: PowerCorrection = field(default_factory=PowerCorrection)
    cost: PowerCost = field(default_factory=PowerCost)
    utility: Union[IdentityUtility, PowerUtility, LogUtility] = field(default_factory=IdentityUtility)
    w_max: float = 100.0

    def __post_init__(self):
        if not self.w_max > 0:
            raise DomainError("w_max must be positive!")
        efforts = np.linspace(0.0, 1.0, GRID_SIZE)
        payments = np.linspace(0.0, self.w_max, GRID_SIZE)

        q_values = self.correction(efforts)
        if abs(float(self.correction(1.0)) - 1.0) > 1e-12:
            raise DomainError("Correction probability must satisfy q(1) = 1!")
        if np.any(q_values < 0) or np.any(q_values > 1):
            raise DomainError("Correction probability must map [0, 1] into [0, 1]!")
        _check_shape("q", q_values, increasing=True, curvature=-1)

        if float(self.cost(0.0)) != 0.0:
            raise DomainError("Effort cost must satisfy c(0) = 0!")
        _check_shape("c", self.cost(efforts), increasing=True, curvature=1)
        _check_shape("mu", self.utility(payments), increasing=True, curvature=-1, strict=True)

        interior = efforts[10:-10]
        _check_derivative("q", self.correction, self.correction.derivative, interior)
        _check_derivative("c", self.cost, self.cost.derivative, interior)
        _check_derivative("mu", self.utility, self.utility.derivative, payments[10:-10])

    def q(self, e: ArrayLike) -> ArrayLike:
        return self.correction(e)

    def dq(self, e: ArrayLike) -> ArrayLike:
        return self.correction.derivative(e)

    def c(self, e: ArrayLike) -> ArrayLike:
        return self.cost(e)

    def dc(self, e: ArrayLike) -> ArrayLike:
        return self.cost.derivative(e)

    def mu(self, w: ArrayLike) -> ArrayLike:
        return self.utility(w)

    def dmu(self, w: ArrayLike) -> ArrayLike:
        return self.utility.derivative(w)

    def accuracy(self, e: ArrayLike) -> ArrayLike:
        """Probability that an AI error is caught and corrected at effort ``e``."""
        return self.correction(e)

    @property
    def has_linear_correction(self) -> bool:
        return self.correction.a == 1.0

    @property
    def has_quadratic_cost(self) -> bool:
        return self.cost.m == 2.0

    @property
    def has_identity_utility(self) -> bool:
        return isinstance(self.utility, IdentityUtility)

    @property
    def is_canonical(self) -> bool:
        """True for linear q, quadratic c with unit scale and identity mu."""
        return (
            self.has_linear_correction
            and self.has_quadratic_cost
            and self.cost.kappa == 1.0
            and self.has_identity_utility
        )

    @classmethod
    def default(cls) -> "EffortModel":
        return cls()

    @classmethod
    def from_config(cls, config: dict[str, Any]) -> "EffortModel":
        """
        Build a model from its configuration dictionary.

        Parameters
        ----------
        config : dict
            Keys ``correction``, ``cost`` and ``utility`` each hold a dictionary
            with a ``family`` name and its parameters; ``w_max`` is optional.
            Missing sections take the default family.

        Returns
        -------
        EffortModel
            The validated model.

        Raises
        ------
        ConfigError
            For unknown families, parameters or keys.
        """
        unknown = set(config) - {"correction", "cost", "utility", "w_max"}
        if unknown:
            raise ConfigError(f"Unknown effort model keys: {sorted(unknown)}!")
        kwargs = {}
        for section in ("correction", "cost", "utility"):
            if section in config:
                kwargs[section] = _build_family(section, config[section])
        if "w_max" in config:
            kwargs["w_max"] = float(config["w_max"])
        return cls(**kwargs)

    def to_config(self) -> dict[str, Any]:
        return {
            "correction": self.correction.to_config(),
            "cost": self.cost.to_config(),
            "utility": self.utility.to_config(),
            "w_max": self.w_max,
        }


def _validate_incentive(rho: float, bonus: float) -> None:
    if not np.isfinite(rho) or not 0 <= rho < 1:
        raise DomainError(f"Auditing rate must lie in [0, 1), got {rho}!")
    if not np.isfinite(bonus) or bonus < 0:
        raise DomainError(f"Bonus must be finite and nonnegative, got {bonus}!")


def sentinel_effort(rho: float, bonus: float, model: EffortModel, tol: float = 1e-12) -> float:
    """
    Effort chosen by a rational agent facing sentinel audits.

    The agent maximizes ``rho * mu(bonus) * q(e) - c(e)`` over ``[0, 1]``. As q is
    concave and c convex, the first-order residual
    ``g(e) = rho * mu(bonus) * q'(e) - c'(e)`` is nonincreasing, so the optimum is
    the root of g when it changes sign and a corner otherwise.

    Parameters
    ----------
    rho : float
        Auditing rate, in [0, 1).
    bonus : float
        Bonus paid for a correct sentinel answer, nonnegative.
    model : EffortModel
        The agent's model.
    tol : float, optional
        Absolute tolerance of the root, by default 1e-12.

    Returns
    -------
    float
        The optimal effort in [0, 1].

    Raises
    ------
    DomainError
        If ``rho`` or ``bonus`` is out of range.
    NumericError
        If the residual is not finite on the bracket.
    """
    _validate_incentive(rho, bonus)
    gain = rho * float(model.mu(bonus))
    if gain <= 0:
        return 0.0

    def residual(e: float) -> float:
        value = gain * float(model.dq(e)) - float(model.dc(e))
        if np.isnan(value):
            raise NumericError(f"First-order residual is not a number at e={e}!")
        return value

    left = 0.0 if np.isfinite(model.dq(0.0)) else 1e-12
    g_left = residual(left)
    if g_left <= 0:
        return 0.0
    g_right = residual(1.0)
    if not np.isfinite(g_right):
        raise NumericError("First-order residual is not finite at e=1!")
    if g_right >= 0:
        return 1.0
    return float(brentq(residual, left, 1.0, xtol=tol))


def implied_efforts(rho: float, bonus: ArrayLike, model: EffortModel) -> np.ndarray:
    """
    Sentinel efforts for a per-instance bonus schedule.

    The best response is solved once per distinct bonus value.
    """
    bonus = np.atleast_1d(np.asarray(bonus, dtype=float))
    unique, inverse = np.unique(bonus, return_inverse=True)
    efforts = np.array([sentinel_effort(rho, float(b), model) for b in unique])
    return efforts[inverse.reshape(bonus.shape)]


def best_response_effort(payoff: Callable[[float], float], tolerance: float = 1e-9) -> float:
    """
    Global maximizer of an arbitrary payoff over efforts in [0, 1].

    A 1001-point grid localizes the best effort. When the grid values are
    certified concave by their second differences, the maximizer is refined by
    bisection on the numerical derivative; otherwise golden-section search
    refines the best grid cell. A constant payoff returns 0, the cheapest
    optimal effort.

    Parameters
    ----------
    payoff : Callable[[float], float]
        Expected payoff as a function of effort.
    tolerance : float, optional
        Target accuracy, by default 1e-9.

    Returns
    -------
    float
        The maximizing effort.

    Raises
    ------
    DomainError
        If ``tolerance`` is not positive.
    NumericError
        If the payoff is not finite on the grid.
    """
    if tolerance <= 0:
        raise DomainError("Tolerance must be positive!")
    grid = np.linspace(0.0, 1.0, 1001)
    values = np.array([payoff(float(e)) for e in grid], dtype=float)
    if not np.all(np.isfinite(values)):
        raise NumericError("Payoff is not finite on [0, 1]!")
    scale = max(1.0, float(np.max(np.abs(values))))
    if np.max(values) - np.min(values) <= 1e-14 * scale:
        return 0.0

    best = int(np.argmax(values))
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, len(grid) - 1)]

    if np.all(np.diff(values, n=2) <= 1e-12 * scale):
        step = 1e-6

        def slope(e: float) -> float:
            a, b = max(e - step, 0.0), min(e + step, 1.0)
            return (payoff(b) - payoff(a)) / (b - a)

        if slope(lo) <= 0:
            return float(lo)
        if slope(hi) >= 0:
            return float(hi)
        return float(bisect(slope, lo, hi, xtol=tolerance))

    x, neg_value = golden_section_search(lambda e: -payoff(e), lo, hi, tol=tolerance)
    return float(x) if -neg_value > values[best] else float(grid[best])
