"""Entropy-regularized policy values: exact population form and IS-weighted empirical form.

Sign convention: ``H(pi)(x) = sum_a pi(a|x) log pi(a|x)`` is the *negative*
Shannon entropy, and the soft value is ``J = V - lam * E[H(pi)(X)]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np

from .core_model import CellSums, LoggedDataset, PolicyClass

__all__ = [
    "ValueEstimator",
    "EntropyEstimator",
    "SoftValueConfig",
    "LOG_CLAMP",
    "entropy_of_policy_at_context",
    "empirical_soft_value",
    "soft_value_and_gradient",
    "population_soft_value",
    "population_value",
]

LOG_CLAMP = float(np.log(1e-12))

Sample = Union[LoggedDataset, CellSums]


class ValueEstimator(str, Enum):
    IPW = "ipw"


class EntropyEstimator(str, Enum):
    #: P_N[H(pi)(X)], no importance weighting needed
    EXACT = "exact_context_average"
    #: P_N[(pi/pi_b)(A|X) log pi(A|X)]
    IS_WEIGHTED = "is_weighted"


@dataclass(frozen=True)
class SoftValueConfig:
    lam: float = 0.5
    value_estimator: ValueEstimator = ValueEstimator.IPW
    entropy_estimator: EntropyEstimator = EntropyEstimator.EXACT

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lam must be nonnegative")
        object.__setattr__(self, "value_estimator", ValueEstimator(self.value_estimator))
        object.__setattr__(self, "entropy_estimator", EntropyEstimator(self.entropy_estimator))


def as_cells(sample: Sample) -> CellSums:
    return sample.cells if isinstance(sample, LoggedDataset) else sample


def entropy_of_policy_at_context(probs) -> float:
    """``sum_a p_a log p_a`` for an interior simplex point (<= 0)."""
    p = np.asarray(probs, dtype=float)
    if np.any(p <= 0):
        raise ValueError("entropy requires an interior policy (all probabilities > 0)")
    return float(np.sum(p * np.log(p)))


def _soft_value(cells: CellSums, probs, logp, lam, entropy) -> float:
    value = float(np.sum(probs * cells.reward) / cells.total)
    if lam == 0:
        return value
    if entropy == EntropyEstimator.EXACT:
        ent = cells.context_mean(np.sum(probs * logp, axis=1))
    else:
        ent = cells.weighted_mean(probs, logp)
    return value - lam * ent


def empirical_soft_value(
    split: Sample,
    policy_class: PolicyClass,
    params: np.ndarray,
    config: SoftValueConfig = SoftValueConfig(),
) -> float:
    """IPW value minus ``lam`` times the configured entropy estimate on a sample."""
    cells = as_cells(split)
    probs = policy_class.probabilities(params, cells.contexts)
    logp = np.maximum(policy_class.log_probabilities(params, cells.contexts), LOG_CLAMP)
    return _soft_value(cells, probs, logp, config.lam, config.entropy_estimator)


def soft_value_and_gradient(
    split: Sample,
    policy_class: PolicyClass,
    params: np.ndarray,
    lam: float,
    entropy: EntropyEstimator = EntropyEstimator.EXACT,
) -> tuple[float, np.ndarray]:
    """Soft value on a sample and its exact gradient in ``params``.

    The gradient is ``P_N[w * s * (Y - lam * log pi)]`` for the exact entropy
    average (scores are centered, so the ``+1`` from differentiating
    ``p log p`` drops out identically), and ``P_N[w * s * (Y - lam * (log pi + 1))]``
    for the IS-weighted entropy, where ``w = pi / pi_b``.
    """
    cells = as_cells(split)
    probs, logp, scores = policy_class.evaluate(params, cells.contexts)
    return _value_and_gradient(cells, probs, np.maximum(logp, LOG_CLAMP), scores, lam, EntropyEstimator(entropy))


def _value_and_gradient(cells, probs, logp, scores, lam, entropy):
    value = _soft_value(cells, probs, logp, lam, entropy)
    integrand = probs * cells.reward
    if lam != 0:
        if entropy == EntropyEstimator.EXACT:
            integrand = integrand - lam * cells.mass[:, None] * probs * logp
        else:
            integrand = integrand - lam * probs * cells.inv_prop * (logp + 1.0)
    grad = np.einsum("uk,ukd->d", integrand, scores) / cells.total
    return value, grad


def population_soft_value(env, policy_class: PolicyClass, params: np.ndarray, lam: float) -> float:
    """Exact ``J_lam(q, pi) = sum_x q_X(x) sum_a pi(a|x) [Q(a,x) - lam log pi(a|x)]``."""
    cells = env.population_cells()
    probs = policy_class.probabilities(params, cells.contexts)
    logp = policy_class.log_probabilities(params, cells.contexts)
    return _soft_value(cells, probs, logp, lam, EntropyEstimator.EXACT)


def population_value(env, policy_class: PolicyClass, params: np.ndarray) -> float:
    return population_soft_value(env, policy_class, params, 0.0)
