import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .exceptions import DegeneracyError, DomainError, NumericError, OptimizationError

logger = logging.getLogger(__name__)

INV_PHI = (math.sqrt(5) - 1) / 2
INV_PHI_SQUARE = (3 - math.sqrt(5)) / 2
STALL_STEPS = 3
STALL_ULPS = 8


def _finite(value: float, where: float) -> float:
    if not np.isfinite(value):
        raise NumericError(f"Non-finite function value {value} at {where}!")
    return float(value)


def golden_section_search(
        func: Callable[[float], float],
        lower: float,
        upper: float,
        tol: float = 1e-8
) -> tuple[float, float]:
    """
    Minimize a unimodal function on a closed interval by golden-section search.

    The endpoints are compared with the final interior point so that a
    minimum sitting on the boundary is returned exactly.

    Parameters
    ----------
    func : Callable[[float], float]
        Function to minimize.
    lower, upper : float
        Interval to search.
    tol : float, optional
        Width of the final bracket, by default 1e-8.

    Returns
    -------
    tuple[float, float]
        The minimizer and the minimum value.

    Raises
    ------
    DomainError
        If ``upper < lower`` or ``tol <= 0``.
    NumericError
        If ``func`` returns a non-finite value.
    """
    if upper < lower:
        raise DomainError(f"Empty interval [{lower}, {upper}]!")
    if tol <= 0:
        raise DomainError("Tolerance must be positive!")
    a, b = float(lower), float(upper)
    h = b - a
    if h <= tol:
        x = 0.5 * (a + b)
        return x, _finite(func(x), x)

    n_steps = int(math.ceil(math.log(tol / h) / math.log(INV_PHI)))
    c = a + INV_PHI_SQUARE * h
    d = a + INV_PHI * h
    yc = _finite(func(c), c)
    yd = _finite(func(d), d)
    for _ in range(n_steps - 1):
        if yc < yd:
            b, d, yd = d, c, yc
            h = INV_PHI * h
            c = a + INV_PHI_SQUARE * h
            yc = _finite(func(c), c)
        else:
            a, c, yc = c, d, yd
            h = INV_PHI * h
            d = a + INV_PHI * h
            yd = _finite(func(d), d)

    x_best, y_best = (c, yc) if yc < yd else (d, yd)
    for endpoint in (lower, upper):
        y_end = _finite(func(endpoint), endpoint)
        if y_end < y_best:
            x_best, y_best = float(endpoint), y_end
    return x_best, y_best


@dataclass(frozen=True)
class NewtonResult:
    x: np.ndarray
    gradient_norm: float
    iterations: int


def damped_newton(
        value: Callable[[np.ndarray], float],
        gradient: Callable[[np.ndarray], np.ndarray],
        hessian: Callable[[np.ndarray], np.ndarray],
        x0: np.ndarray,
        gtol: float = 1e-9,
        max_iter: int = 100,
        c_1: float = 1e-4,
        gamma_dec: float = 0.5,
        alpha_min: float = 1e-12,
        stall_gtol: float = 1e-7
) -> NewtonResult:
    """
    Minimize a smooth convex function by Newton's method with Armijo backtracking.

    Parameters
    ----------
    value, gradient, hessian : Callable
        Objective, its gradient (shape ``(d,)``) and Hessian (shape ``(d, d)``).
    x0 : np.ndarray
        Starting point.
    gtol : float, optional
        Stop once the gradient's Euclidean norm is at most ``gtol``.
    max_iter : int, optional
        Maximum number of Newton steps.
    c_1 : float, optional
        Armijo sufficient-decrease constant, must lie in (0, 1).
    gamma_dec : float, optional
        Step shrink factor.
    alpha_min : float, optional
        Smallest step tried before giving up on the line search.
    stall_gtol : float, optional
        Gradient norm accepted instead of ``gtol`` once the objective stops
        decreasing in floating point, either because the line search fails or
        because ``STALL_STEPS`` consecutive steps leave it unchanged.

    Returns
    -------
    NewtonResult
        The minimizer, the final gradient norm and the number of steps taken.

    Raises
    ------
    DegeneracyError
        If the Hessian is singular at an iterate.
    OptimizationError
        If the gradient tolerance is not reached within ``max_iter`` steps
        and the iterates have not stalled below ``stall_gtol``.
    """
    if not 0 < c_1 < 1:
        raise DomainError("Unsuitable line search parameter c_1!")
    x_k = np.array(x0, dtype=float)
    f_k = _finite(value(x_k), 0)
    g_k = gradient(x_k)
    stalls = 0
    for iteration in range(max_iter + 1):
        g_norm = float(np.linalg.norm(g_k))
        logger.debug("newton iteration %d: f=%.12g |g|=%.3e", iteration, f_k, g_norm)
        if g_norm <= gtol:
            return NewtonResult(x=x_k, gradient_norm=g_norm, iterations=iteration)
        if stalls >= STALL_STEPS and g_norm <= stall_gtol:
            logger.debug("newton stalled at |g|=%.3e after %d iterations", g_norm, iteration)
            return NewtonResult(x=x_k, gradient_norm=g_norm, iterations=iteration)
        if iteration == max_iter:
            break
        try:
            p_k = -np.linalg.solve(hessian(x_k), g_k)
        except np.linalg.LinAlgError as exc:
            raise DegeneracyError(f"Singular Hessian at iteration {iteration}!") from exc

        slope = float(g_k @ p_k)
        alpha = 1.0
        while True:
            x_new = x_k + alpha * p_k
            f_new = value(x_new)
            if np.isfinite(f_new) and f_new <= f_k + c_1 * alpha * slope:
                break
            alpha *= gamma_dec
            if alpha < alpha_min:
                # no further decrease is representable; accept the current point
                x_new, f_new = x_k, f_k
                break
        if x_new is x_k:
            if g_norm <= max(gtol, stall_gtol):
                return NewtonResult(x=x_k, gradient_norm=g_norm, iterations=iteration)
            raise OptimizationError("damped Newton", iteration, g_norm)
        # a decrease of a few ulps is rounding, not progress
        flat = f_k - float(f_new) <= STALL_ULPS * np.finfo(float).eps * max(1.0, abs(f_k))
        stalls = stalls + 1 if flat else 0
        x_k, f_k = x_new, float(f_new)
        g_k = gradient(x_k)
    raise OptimizationError("damped Newton", max_iter, float(np.linalg.norm(g_k)))
