"""Synthetic finite-context bandit environments with exact oracles."""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.special import logsumexp, softmax

from ._ascent import backtracking_ascent
from .core_model import CellSums, LinearSoftmax, LoggedDataset, PolicyClass, TabularSoftmax
from .natural_gradient import ConditioningWarning, FisherSingularError, natural_gradient
from .objective import population_soft_value, population_value, soft_value_and_gradient

__all__ = [
    "RewardLaw",
    "BehaviorSpec",
    "SyntheticEnv",
    "OracleConfig",
    "fixture_a",
    "random_env",
    "sample_logged_dataset",
    "soft_optimal_policy_nonparametric",
    "soft_optimal_value",
    "oracle_in_class",
    "hard_optimal_value",
    "exact_regret",
]

logger = logging.getLogger(__name__)


class RewardLaw(str, Enum):
    BERNOULLI = "bernoulli"
    BETA = "beta"


def clip_and_renormalize(p: np.ndarray, floor: float) -> np.ndarray:
    """Raise entries to ``floor`` and rescale the rest so each row still sums to one."""
    p = np.array(p, dtype=float)
    K = p.shape[-1]
    if floor * K > 1 + 1e-12:
        raise ValueError(f"floor {floor} infeasible with {K} actions")
    for row in p.reshape(-1, K):
        clipped = np.zeros(K, dtype=bool)
        for _ in range(K):
            low = (row < floor) & ~clipped
            if not low.any():
                break
            clipped |= low
            free = ~clipped
            budget = 1.0 - floor * clipped.sum()
            row[clipped] = floor
            row[free] *= budget / row[free].sum()
    return p


@dataclass(frozen=True)
class BehaviorSpec:
    kind: str = "uniform"  # "uniform" | "softmax_q"
    temperature: float = 1.0
    floor: float = 0.01

    def __post_init__(self):
        if self.kind not in ("uniform", "softmax_q"):
            raise ValueError(f"unknown behavior kind {self.kind!r}")
        if not self.floor > 0 or not self.temperature > 0:
            raise ValueError("floor and temperature must be positive")

    def propensities(self, env: "SyntheticEnv") -> np.ndarray:
        M, K = env.Q.shape
        if self.kind == "uniform":
            p = np.full((M, K), 1.0 / K)
        else:
            p = softmax(env.Q / self.temperature, axis=1)
        return clip_and_renormalize(p, self.floor)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "temperature": self.temperature, "floor": self.floor}


@dataclass(frozen=True, eq=False)
class SyntheticEnv:
    """Finite context support with weights ``q_x`` and mean rewards ``Q[x, a]``.

    ``features`` (M, K, d) is optional and only used to build a
    :class:`LinearSoftmax` policy class for the environment.
    """

    q_x: np.ndarray
    Q: np.ndarray
    reward_law: RewardLaw = RewardLaw.BERNOULLI
    concentration: float = 10.0
    features: Optional[np.ndarray] = None
    behavior: BehaviorSpec = field(default_factory=BehaviorSpec)
    default_lambda: float = 0.5

    def __post_init__(self):
        q_x = np.asarray(self.q_x, dtype=float)
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        if q_x.ndim != 1 or Q.shape[0] != q_x.size:
            raise ValueError("Q must have one row per context")
        if np.any(q_x < 0) or abs(q_x.sum() - 1) > 1e-9:
            raise ValueError("q_x must lie on the simplex")
        if np.any(Q < 0) or np.any(Q > 1):
            raise ValueError("mean rewards must lie in [0, 1]")
        law = RewardLaw(self.reward_law)
        if law == RewardLaw.BETA and (np.any(Q <= 0) or np.any(Q >= 1)):
            raise ValueError("Beta rewards need mean rewards strictly inside (0, 1)")
        object.__setattr__(self, "q_x", q_x)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "reward_law", law)
        if self.features is not None:
            feats = np.asarray(self.features, dtype=float)
            if feats.ndim != 3 or feats.shape[:2] != Q.shape:
                raise ValueError("features must have shape (M, K, d)")
            object.__setattr__(self, "features", feats)

    @property
    def n_contexts(self) -> int:
        return self.Q.shape[0]

    @property
    def n_actions(self) -> int:
        return self.Q.shape[1]

    def population_cells(self) -> CellSums:
        """The exact measure ``P_{q, pi_b}`` in sufficient-statistic form."""
        return self._population_cells

    @cached_property
    def _population_cells(self) -> CellSums:
        contexts = np.arange(self.n_contexts)
        inv_prop = np.repeat(self.q_x[:, None], self.n_actions, axis=1)
        return CellSums(contexts, self.q_x.copy(), inv_prop, inv_prop * self.Q, 1.0)

    def tabular_class(self) -> TabularSoftmax:
        return TabularSoftmax(self.n_contexts, self.n_actions)

    def linear_class(self) -> LinearSoftmax:
        if self.features is None:
            raise ValueError("environment has no feature map")
        return LinearSoftmax.from_table(self.features)

    def to_dict(self) -> dict:
        out = {
            "contexts": self.n_contexts,
            "q_X": self.q_x.tolist(),
            "Q": self.Q.tolist(),
            "reward_law": {"kind": self.reward_law.value, "concentration": self.concentration},
            "behavior": self.behavior.to_dict(),
            "lambda": self.default_lambda,
        }
        if self.features is not None:
            out["features"] = self.features.tolist()
        return out

    @classmethod
    def from_dict(cls, spec: dict) -> "SyntheticEnv":
        law = spec.get("reward_law", "bernoulli")
        if isinstance(law, str):
            law = {"kind": law}
        contexts = spec.get("contexts")
        Q = np.atleast_2d(np.asarray(spec["Q"], dtype=float))
        q_x = spec.get("q_X")
        if q_x is None:
            q_x = np.full(Q.shape[0], 1.0 / Q.shape[0])
        if contexts is not None:
            n = contexts if isinstance(contexts, int) else len(contexts)
            if n != Q.shape[0]:
                raise ValueError(f"spec lists {n} contexts but Q has {Q.shape[0]} rows")
        return cls(
            q_x=q_x,
            Q=Q,
            reward_law=law["kind"],
            concentration=float(law.get("concentration", 10.0)),
            features=spec.get("features"),
            behavior=BehaviorSpec(**spec.get("behavior", {})),
            default_lambda=float(spec.get("lambda", 0.5)),
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "SyntheticEnv":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def fixture_a(floor: float = 0.01) -> SyntheticEnv:
    """One context, two actions, ``Q = (0.9, 0.1)``, uniform logging."""
    return SyntheticEnv(
        q_x=np.ones(1),
        Q=np.array([[0.9, 0.1]]),
        behavior=BehaviorSpec("uniform", floor=floor),
        default_lambda=0.5,
    )


def random_env(
    n_contexts: int = 5,
    n_actions: int = 3,
    seed: int = 0,
    reward_law: RewardLaw = RewardLaw.BERNOULLI,
    behavior: Optional[BehaviorSpec] = None,
    feature_dim: Optional[int] = None,
) -> SyntheticEnv:
    """Seeded random environment: balanced Dirichlet context weights, Q in [0.1, 0.9]."""
    rng = np.random.default_rng(seed)
    q_x = rng.dirichlet(np.full(n_contexts, 5.0))
    Q = rng.uniform(0.1, 0.9, size=(n_contexts, n_actions))
    features = None
    if feature_dim is not None:
        features = rng.normal(size=(n_contexts, n_actions, feature_dim))
    return SyntheticEnv(
        q_x=q_x,
        Q=Q,
        reward_law=reward_law,
        features=features,
        behavior=behavior if behavior is not None else BehaviorSpec("softmax_q", temperature=1.0),
    )


def sample_logged_dataset(
    env: SyntheticEnv, behavior: Optional[BehaviorSpec], N: int, seed: int
) -> LoggedDataset:
    """Draw ``N`` i.i.d. records ``X ~ q_X``, ``A ~ pi_b(.|X)``, ``Y ~ law(Q[X, A])``."""
    if N < 1:
        raise ValueError("N must be >= 1")
    behavior = env.behavior if behavior is None else behavior
    rng = np.random.default_rng(seed)
    pb = behavior.propensities(env)
    x = rng.choice(env.n_contexts, size=N, p=env.q_x)
    cum = np.cumsum(pb[x], axis=1)
    a = np.minimum((rng.random(N)[:, None] > cum).sum(axis=1), env.n_actions - 1)
    mean = env.Q[x, a]
    if env.reward_law == RewardLaw.BERNOULLI:
        y = (rng.random(N) < mean).astype(float)
    else:
        k = env.concentration
        y = rng.beta(mean * k, (1 - mean) * k)
    return LoggedDataset(x, a, y, pb[x], overlap_floor=behavior.floor)


def soft_optimal_policy_nonparametric(env: SyntheticEnv, lam: float) -> np.ndarray:
    """Closed form ``pi*(a|x) = softmax(Q[x] / lam)`` over the full simplex."""
    if not lam > 0:
        raise ValueError("lam must be positive")
    return softmax(env.Q / lam, axis=1)


def soft_optimal_value(env: SyntheticEnv, lam: float) -> float:
    """``sum_x q_X(x) lam logsumexp(Q[x] / lam)``."""
    return float(env.q_x @ (lam * logsumexp(env.Q / lam, axis=1)))


@dataclass(frozen=True)
class OracleConfig:
    restarts: int = 20
    tolerance: float = 1e-10
    max_steps: int = 20000
    init_scale: float = 1.0
    seed: int = 0


def oracle_in_class(
    env: SyntheticEnv,
    policy_class: PolicyClass,
    lam: float,
    config: OracleConfig = OracleConfig(),
) -> np.ndarray:
    """Maximize the exact soft value over the class by multi-start ascent.

    The ascent direction is the population natural gradient (falling back to
    the plain gradient when the Fisher system cannot be solved).
    """
    cells = env.population_cells()
    rng = np.random.default_rng(config.seed)

    def fun(theta):
        return soft_value_and_gradient(cells, policy_class, theta, lam)

    def direction(theta, grad):
        try:
            with warnings.catch_warnings():
                # near-deterministic iterates have flat directions; the ascent only needs a direction
                warnings.simplefilter("ignore", ConditioningWarning)
                return natural_gradient(cells, policy_class, theta, lam).coefficients
        except FisherSingularError:
            return grad

    results = []
    for r in range(config.restarts):
        theta0 = rng.normal(0.0, config.init_scale, policy_class.dim) if r else policy_class.zeros()
        res = backtracking_ascent(fun, theta0, config.tolerance, config.max_steps, direction=direction)
        if np.isfinite(res.value):
            results.append(res)
    if not results:
        raise RuntimeError("every oracle restart diverged")
    values = np.array([r.value for r in results])
    best = results[int(np.argmax(values))]
    if values.max() - values.min() > 1e-6:
        warnings.warn("possible nonconvexity; report best", RuntimeWarning, stacklevel=2)
    if not best.converged and best.grad_norm > 1e-8:
        logger.warning("oracle ascent stopped with gradient norm %.3g", best.grad_norm)
    return best.params


def hard_optimal_value(env: SyntheticEnv, policy_class: PolicyClass) -> float:
    """Supremum of the unregularized value over the class.

    Exact for :class:`TabularSoftmax`; otherwise approached by an annealed
    sequence of soft oracles (a lower bound on the supremum).
    """
    if isinstance(policy_class, TabularSoftmax):
        return float(env.q_x @ env.Q.max(axis=1))
    best = -np.inf
    theta = policy_class.zeros()
    for lam in (1e-1, 3e-2, 1e-2, 3e-3, 1e-3):
        cfg = OracleConfig(restarts=5, tolerance=1e-9, max_steps=5000)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            theta = oracle_in_class(env, policy_class, lam, cfg)
        best = max(best, population_value(env, policy_class, theta))
    return best


def exact_regret(
    env: SyntheticEnv,
    policy_class: PolicyClass,
    lam: float,
    params: np.ndarray,
    oracle_params: np.ndarray,
    hard_optimum: Optional[float] = None,
) -> dict:
    """Soft regret against the in-class oracle and hard regret against the class supremum of V."""
    soft = population_soft_value(env, policy_class, oracle_params, lam) - population_soft_value(
        env, policy_class, params, lam
    )
    if hard_optimum is None:
        hard_optimum = hard_optimal_value(env, policy_class)
    hard = hard_optimum - population_value(env, policy_class, params)
    return {"soft_regret": float(soft), "hard_regret": float(hard)}
