"""Regret-decomposition diagnostics for the debiased policy on synthetic environments.

For the selected policy ``pi_hat`` and the in-class oracle ``pi_star`` the report
holds the soft regret and three terms whose sum bounds it when the selected
flow time is an interior maximizer:

    I   = (P - P_N^1)[(pi_hat/pi_b) G0 phi]
    II  = P[(pi_hat/pi_b) (G_P - G0) phi]
    III = ||G0 - G1||_{pi_hat, P_N^1} * ||phi||_{pi_hat, P_N^1}

with ``phi = pi_star / pi_hat - 1``, ``G0, G1`` the natural gradients at
``pi_hat`` estimated on splits 0 and 1, and ``G_P`` the exact one. Population
expectations are sums over the finite environment (the integrands do not
involve Y).
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core_model import LoggedDataset, PolicyClass
from .envs import (
    SyntheticEnv,
    exact_regret,
    hard_optimal_value,
    oracle_in_class,
    sample_logged_dataset,
)
from .learner import DebiasedResult, LearnerConfig, debiased_policy_learning
from .natural_gradient import natural_gradient, population_natural_gradient
from .objective import Sample, as_cells

__all__ = [
    "TheoremOneReport",
    "weighted_inner_product",
    "weighted_norm",
    "likelihood_ratio_score",
    "compute_terms",
    "entropy_curvature",
    "hard_soft_gap_check",
    "replication_seeds",
    "run_replication",
    "run_campaign",
    "REPORT_COLUMNS",
    "reports_to_csv",
]

REPORT_COLUMNS = [
    "seed",
    "N",
    "lambda",
    "soft_regret",
    "I",
    "II",
    "III",
    "slack",
    "interior",
    "stationarity_residual",
]

# Evaluator on a batch of contexts returning a (U, K) table.
TableFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class TheoremOneReport:
    soft_regret: float
    term_I: float
    term_II: float
    term_III: float
    bound_slack: float
    interior: bool
    stationarity_residual: float
    norm_G0: float
    norm_G1: float
    norm_G_diff: float
    norm_phi: float
    eps_tol: float
    class_convex: bool
    hard_regret: float = math.nan
    t1: float = math.nan
    #: smallest entropy curvature along pi_hat (1 + eps phi) over 20 points of eps in [0, 1]
    min_curvature: float = math.nan
    split1_value_erm: float = math.nan
    split1_value_final: float = math.nan
    seed: Optional[int] = None
    N: Optional[int] = None
    lam: Optional[float] = None

    @property
    def bound_holds(self) -> bool:
        return self.bound_slack >= -self.eps_tol

    @property
    def stationarity_ok(self) -> bool:
        return abs(self.stationarity_residual) <= 1e-3 * (self.norm_G0 * self.norm_G1 + 1e-12)

    def row(self) -> list:
        return [
            self.seed,
            self.N,
            self.lam,
            self.soft_regret,
            self.term_I,
            self.term_II,
            self.term_III,
            self.bound_slack,
            int(self.interior),
            self.stationarity_residual,
        ]


def weighted_inner_product(
    f1: TableFn, f2: TableFn, policy_class: PolicyClass, params: np.ndarray, split: Sample
) -> float:
    """``P_N[(pi/pi_b)(A|X) f1(X,A) f2(X,A)]`` for functions of (context, action)."""
    cells = as_cells(split)
    probs = policy_class.probabilities(params, cells.contexts)
    return cells.weighted_mean(probs, f1(cells.contexts) * f2(cells.contexts))


def weighted_norm(f: TableFn, policy_class: PolicyClass, params: np.ndarray, split: Sample) -> float:
    return math.sqrt(max(weighted_inner_product(f, f, policy_class, params, split), 0.0))


def likelihood_ratio_score(oracle_probs: TableFn, hat_probs: TableFn) -> TableFn:
    """``phi(x, a) = pi_star(a|x) / pi_hat(a|x) - 1`` as an evaluator on contexts."""

    def phi(contexts):
        hat = hat_probs(contexts)
        if np.any(hat < 1e-12):
            raise ValueError("policy not interior")
        return oracle_probs(contexts) / hat - 1.0

    return phi


def _policy_table(policy_class, params) -> TableFn:
    return lambda contexts: policy_class.probabilities(params, contexts)


def _gradient_table(policy_class, params, solve) -> TableFn:
    return lambda contexts: solve.evaluate(policy_class, params, contexts)


def entropy_curvature(env: SyntheticEnv, hat_probs: np.ndarray, phi: np.ndarray, eps) -> np.ndarray:
    """Second derivative of ``P H(pi_eps)(X)`` along ``pi_eps = pi_hat (1 + eps phi)``.

    Uses ``sum_a pi_hat (pi_hat / pi_eps) phi^2`` per context, averaged over q_X.
    """
    eps = np.atleast_1d(np.asarray(eps, dtype=float))
    out = np.empty(eps.size)
    for i, e in enumerate(eps):
        pi_eps = hat_probs * (1.0 + e * phi)
        out[i] = env.q_x @ np.sum(hat_probs * (hat_probs / pi_eps) * phi**2, axis=1)
    return out


def compute_terms(
    env: SyntheticEnv,
    splits: Sequence[LoggedDataset],
    policy_class: PolicyClass,
    result: DebiasedResult,
    lam: float,
    ridge: Optional[float] = None,
    oracle_params: Optional[np.ndarray] = None,
    hard_optimum: Optional[float] = None,
) -> TheoremOneReport:
    """Evaluate soft regret, terms I, II, III and the stationarity inner product.

    ``splits`` are the three views (split -1, split 0, split 1) the result was
    fitted on.
    """
    _, split0, split1 = splits
    if oracle_params is None:
        oracle_params = oracle_in_class(env, policy_class, lam)
    theta = result.final_params
    pop = env.population_cells()
    contexts = pop.contexts

    sol0 = natural_gradient(split0, policy_class, theta, lam, ridge)
    sol1 = natural_gradient(split1, policy_class, theta, lam, ridge)
    solP = population_natural_gradient(env, policy_class, theta, lam)

    hat = _policy_table(policy_class, theta)
    phi = likelihood_ratio_score(_policy_table(policy_class, oracle_params), hat)
    G0 = _gradient_table(policy_class, theta, sol0)
    G1 = _gradient_table(policy_class, theta, sol1)
    GP = _gradient_table(policy_class, theta, solP)

    def inner(f1, f2, sample):
        return weighted_inner_product(f1, f2, policy_class, theta, sample)

    term_I = inner(G0, phi, pop) - inner(G0, phi, split1)
    term_II = inner(lambda c: GP(c) - G0(c), phi, pop)
    diff = lambda c: G0(c) - G1(c)  # noqa: E731
    norm_diff = weighted_norm(diff, policy_class, theta, split1)
    norm_phi = weighted_norm(phi, policy_class, theta, split1)
    term_III = norm_diff * norm_phi

    curvature = entropy_curvature(env, hat(contexts), phi(contexts), np.linspace(0.0, 1.0, 20))

    regret = exact_regret(env, policy_class, lam, theta, oracle_params, hard_optimum)
    soft = regret["soft_regret"]
    u0 = sol0.coefficients
    eps_tol = 1e-6 + 10 * sol0.ridge * float(u0 @ u0)
    return TheoremOneReport(
        soft_regret=soft,
        term_I=term_I,
        term_II=term_II,
        term_III=term_III,
        bound_slack=term_I + term_II + term_III - soft,
        interior=bool(result.index_selection.interior),
        stationarity_residual=inner(G1, G0, split1),
        norm_G0=weighted_norm(G0, policy_class, theta, split1),
        norm_G1=weighted_norm(G1, policy_class, theta, split1),
        norm_G_diff=norm_diff,
        norm_phi=norm_phi,
        eps_tol=eps_tol,
        class_convex=bool(policy_class.convex),
        hard_regret=regret["hard_regret"],
        t1=result.index_selection.t1,
        min_curvature=float(curvature.min()),
        split1_value_erm=result.values["split1"]["erm"],
        split1_value_final=result.values["split1"]["debiased"],
    )


def hard_soft_gap_check(
    env: SyntheticEnv,
    policy_class: PolicyClass,
    lam: float,
    params: np.ndarray,
    oracle_params: np.ndarray,
    hard_optimum: Optional[float] = None,
) -> dict:
    """Check ``hard_regret <= soft_regret + lam log K``."""
    r = exact_regret(env, policy_class, lam, params, oracle_params, hard_optimum)
    lhs = r["hard_regret"]
    rhs = r["soft_regret"] + lam * math.log(env.n_actions)
    return {"lhs": lhs, "rhs": rhs, "holds": bool(lhs <= rhs + 1e-12)}


def replication_seeds(base_seed: int, n: int) -> list[int]:
    """Independent seed streams: replication ``i`` uses ``base_seed XOR i``."""
    return [base_seed ^ i for i in range(n)]


@dataclass(frozen=True)
class _Job:
    env: SyntheticEnv
    policy_kind: str
    n_per_split: int
    config: LearnerConfig
    oracle_params: np.ndarray
    hard_optimum: float


def _policy_for(env: SyntheticEnv, kind: str) -> PolicyClass:
    return env.tabular_class() if kind == "tabular" else env.linear_class()


def run_replication(
    env: SyntheticEnv,
    policy_class: PolicyClass,
    n_per_split: int,
    seed: int,
    config: LearnerConfig,
    oracle_params: np.ndarray,
    hard_optimum: Optional[float] = None,
) -> tuple[TheoremOneReport, DebiasedResult]:
    """Sample ``3 * n_per_split`` records with ``seed``, fit, and report."""
    cfg = LearnerConfig.from_dict({**config.to_dict(), "seed": seed})
    data = sample_logged_dataset(env, None, 3 * n_per_split, seed)
    result = debiased_policy_learning(data, policy_class, cfg)
    views = result.splits.views(data)
    report = compute_terms(
        env, views, policy_class, result, cfg.lam, cfg.ridge, oracle_params, hard_optimum
    )
    report = TheoremOneReport(**{**asdict(report), "seed": seed, "N": n_per_split, "lam": cfg.lam})
    return report, result


def _run_job(args):
    job, seed = args
    pc = _policy_for(job.env, job.policy_kind)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return run_replication(job.env, pc, job.n_per_split, seed, job.config, job.oracle_params, job.hard_optimum)[0]


def run_campaign(
    env: SyntheticEnv,
    policy_kind: str,
    n_per_split: int,
    seeds: Sequence[int],
    config: LearnerConfig,
    jobs: int = 1,
) -> list[TheoremOneReport]:
    """One report per seed, in seed order; ``jobs > 1`` spreads seeds over processes."""
    if not seeds:
        raise ValueError("empty seed list")
    pc = _policy_for(env, policy_kind)
    oracle = oracle_in_class(env, pc, config.lam)
    hard = hard_optimal_value(env, pc)
    job = _Job(env, policy_kind, n_per_split, config, oracle, hard)
    tasks = [(job, s) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_job, tasks))
    return [_run_job(t) for t in tasks]


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def reports_to_csv(reports: Sequence[TheoremOneReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for r in reports:
        writer.writerow([_fmt(v) for v in r.row()])
    return buf.getvalue()
