"""Backtracking line-search ascent shared by the ERM fit and the in-class oracle."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


@dataclass
class AscentResult:
    params: np.ndarray
    value: float
    grad_norm: float
    n_steps: int
    converged: bool


def backtracking_ascent(
    fun: Callable[[np.ndarray], tuple[float, np.ndarray]],
    theta0: np.ndarray,
    tol: float,
    max_steps: int,
    step: float = 1.0,
    direction: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None,
    armijo: float = 1e-4,
) -> AscentResult:
    """Maximize ``fun`` (returning value and gradient) from ``theta0``.

    ``direction(theta, grad)`` defaults to the gradient itself. The trial step
    doubles after every accepted move and halves until the Armijo condition holds.
    """
    theta = np.array(theta0, dtype=float)
    value, grad = fun(theta)
    if not np.isfinite(value):
        return AscentResult(theta, value, np.inf, 0, False)
    for k in range(max_steps):
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= tol:
            return AscentResult(theta, value, gnorm, k, True)
        d = grad if direction is None else direction(theta, grad)
        slope = float(grad @ d)
        if not slope > 0:
            d, slope = grad, gnorm**2
        while True:
            trial = theta + step * d
            trial_value, trial_grad = fun(trial)
            if np.isfinite(trial_value) and trial_value >= value + armijo * step * slope:
                break
            step *= 0.5
            if step < 1e-20:
                return AscentResult(theta, value, gnorm, k, False)
        # an accepted step that no longer changes the value means we are at float resolution
        stalled = trial_value == value
        theta, value, grad = trial, trial_value, trial_grad
        if stalled:
            gnorm = float(np.linalg.norm(grad))
            return AscentResult(theta, value, gnorm, k + 1, gnorm <= tol)
        step *= 2.0
    return AscentResult(theta, value, float(np.linalg.norm(grad)), max_steps, False)
