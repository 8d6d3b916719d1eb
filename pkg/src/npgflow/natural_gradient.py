"""Natural policy gradient: ridge-regularized Fisher system in score coordinates.

The natural gradient at ``pi_theta`` is the function ``G(x, a) = u . s(x, a)``
with ``s`` the centered scores and ``u`` solving ``(F + ridge I) u = g`` where

    F = P_N[(pi/pi_b)(A|X) s(X,A) s(X,A)^T]
    g = d/dtheta J~_lam(P_N, pi_theta)

i.e. ``u`` minimizes ``1/2 P_N[(pi/pi_b) (u.s)^2] - g.u`` over the tangent space.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .core_model import PolicyClass
from .objective import (
    LOG_CLAMP,
    EntropyEstimator,
    Sample,
    _value_and_gradient,
    as_cells,
    soft_value_and_gradient,
)

__all__ = [
    "FisherSingularError",
    "ConditioningWarning",
    "GradientSolve",
    "CONDITION_WARN",
    "default_ridge",
    "assemble_fisher",
    "assemble_linear_term",
    "solve_natural_gradient",
    "natural_gradient",
    "population_natural_gradient",
    "advantage_function",
]

CONDITION_WARN = 1e10
RIDGE_SCALE = 1e-8


class FisherSingularError(np.linalg.LinAlgError):
    pass


class ConditioningWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class GradientSolve:
    """Coefficients ``u`` of the natural gradient and the system they solve."""

    coefficients: np.ndarray
    fisher: np.ndarray
    linear_term: np.ndarray
    ridge: float
    grad_sq_norm: float
    residual: float

    def evaluate(self, policy_class: PolicyClass, params: np.ndarray, contexts) -> np.ndarray:
        """Table ``G(x, a) = u . s(x, a)`` of shape (U, K)."""
        return policy_class.scores(params, contexts) @ self.coefficients


def default_ridge(fisher: np.ndarray) -> float:
    d = fisher.shape[0]
    return RIDGE_SCALE * float(np.trace(fisher)) / d if d else 0.0


def assemble_fisher(split: Sample, policy_class: PolicyClass, params: np.ndarray) -> np.ndarray:
    cells = as_cells(split)
    probs, _, s = policy_class.evaluate(params, cells.contexts)
    return _fisher(cells, probs, s)


def _fisher(cells, probs, s):
    ws = (probs * cells.inv_prop)[:, :, None] * s
    F = np.einsum("ukd,uke->de", ws, s) / cells.total
    return 0.5 * (F + F.T)


def assemble_linear_term(
    split: Sample,
    policy_class: PolicyClass,
    params: np.ndarray,
    lam: float,
    entropy: EntropyEstimator = EntropyEstimator.EXACT,
) -> np.ndarray:
    return soft_value_and_gradient(split, policy_class, params, lam, entropy)[1]


def solve_natural_gradient(
    fisher: np.ndarray, linear_term: np.ndarray, ridge: Optional[float] = None
) -> GradientSolve:
    """Solve ``(F + ridge I) u = g`` by Cholesky with one refinement step.

    ``ridge=None`` selects ``1e-8 * trace(F) / d``.
    """
    F = np.asarray(fisher, dtype=float)
    g = np.asarray(linear_term, dtype=float)
    if ridge is None:
        ridge = default_ridge(F)
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    A = F + ridge * np.eye(F.shape[0])
    try:
        factor = scipy.linalg.cho_factor(A, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError):
        raise FisherSingularError("Fisher singular; increase ridge") from None
    u = scipy.linalg.cho_solve(factor, g)
    u = u + scipy.linalg.cho_solve(factor, g - A @ u)

    # conditioning of the metric itself: a ridge can hide flat directions
    eig = np.linalg.eigvalsh(F) if F.size else np.ones(1)
    cond = eig[-1] / eig[0] if eig[0] > 0 else np.inf
    if not cond < CONDITION_WARN:
        warnings.warn(
            f"Fisher matrix is ill-conditioned (cond={cond:.3g}); solution leans on the ridge",
            ConditioningWarning,
            stacklevel=2,
        )
    gnorm = np.linalg.norm(g)
    residual = float(np.linalg.norm(A @ u - g) / gnorm) if gnorm > 0 else float(np.linalg.norm(A @ u))
    return GradientSolve(
        coefficients=u,
        fisher=F,
        linear_term=g,
        ridge=float(ridge),
        grad_sq_norm=float(u @ F @ u),
        residual=residual,
    )


def natural_gradient(
    split: Sample,
    policy_class: PolicyClass,
    params: np.ndarray,
    lam: float,
    ridge: Optional[float] = None,
    entropy: EntropyEstimator = EntropyEstimator.EXACT,
) -> GradientSolve:
    """Estimated natural gradient on a sample (or on population cells)."""
    cells = as_cells(split)
    probs, logp, s = policy_class.evaluate(params, cells.contexts)
    F = _fisher(cells, probs, s)
    _, g = _value_and_gradient(cells, probs, np.maximum(logp, LOG_CLAMP), s, lam, EntropyEstimator(entropy))
    return solve_natural_gradient(F, g, ridge)


def population_natural_gradient(
    env, policy_class: PolicyClass, params: np.ndarray, lam: float, ridge: float = 0.0
) -> GradientSolve:
    """Exact natural gradient under the environment, by summation over q_X x pi."""
    return natural_gradient(env.population_cells(), policy_class, params, lam, ridge)


def advantage_function(env, policy_class: PolicyClass, params: np.ndarray, lam: float) -> np.ndarray:
    """Centered entropy-adjusted advantage as an (M, K) table."""
    contexts = np.arange(env.n_contexts)
    probs = policy_class.probabilities(params, contexts)
    logp = policy_class.log_probabilities(params, contexts)
    adjusted = env.Q - lam * logp
    return adjusted - np.sum(probs * adjusted, axis=1, keepdims=True)
