"""Natural policy gradient flow in parameter coordinates and cross-fitted index selection.

Along ``d theta / dt = u(theta)`` the log-policy moves by ``u . s``, which is the
estimated natural gradient, so integrating the coefficients integrates the flow
on log pi.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .core_model import PolicyClass
from .natural_gradient import GradientSolve, natural_gradient
from .objective import (
    EntropyEstimator,
    Sample,
    SoftValueConfig,
    as_cells,
    empirical_soft_value,
    soft_value_and_gradient,
)

__all__ = [
    "Integrator",
    "FlowConfig",
    "Checkpoint",
    "FlowPath",
    "IndexSelection",
    "NaturalGradientField",
    "integrate_flow",
    "select_index",
    "golden_section_max",
]

logger = logging.getLogger(__name__)

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class Integrator(str, Enum):
    EULER = "euler"
    RK4 = "rk4"


@dataclass(frozen=True)
class FlowConfig:
    step_size: float = 0.05
    t_max: float = 10.0
    integrator: Integrator = Integrator.RK4
    stop_grad_norm: float = 1e-10
    checkpoint_every: int = 1

    def __post_init__(self):
        object.__setattr__(self, "integrator", Integrator(self.integrator))
        if not (0 < self.step_size < self.t_max):
            raise ValueError("need 0 < step_size < t_max")
        if self.stop_grad_norm < 0:
            raise ValueError("stop_grad_norm must be nonnegative")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")


@dataclass(frozen=True)
class Checkpoint:
    t: float
    params: np.ndarray
    grad_sq_norm: float
    #: d theta / dt at this point, used for cubic Hermite dense output
    velocity: np.ndarray


@dataclass(frozen=True)
class FlowPath:
    checkpoints: tuple
    terminated_early: bool = False
    stop_reason: str = "t_max"

    def __post_init__(self):
        if not self.checkpoints:
            raise ValueError("a flow path needs at least one checkpoint")
        times = np.array([c.t for c in self.checkpoints])
        if times[0] != 0 or np.any(np.diff(times) <= 0):
            raise ValueError("checkpoint times must increase strictly from 0")

    @property
    def times(self) -> np.ndarray:
        return np.array([c.t for c in self.checkpoints])

    @property
    def t_last(self) -> float:
        return self.checkpoints[-1].t

    def _locate(self, t: float) -> int:
        if not (0.0 <= t <= self.t_last):
            raise ValueError(f"t={t} outside [0, {self.t_last}]")
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return min(k, len(self.checkpoints) - 2)

    def params_at(self, t: float) -> np.ndarray:
        """Policy parameters at time ``t`` by cubic Hermite interpolation of the checkpoints."""
        return self._hermite(t)[0]

    def velocity_at(self, t: float) -> np.ndarray:
        return self._hermite(t)[1]

    def _hermite(self, t: float):
        if len(self.checkpoints) == 1:
            if t != 0:
                raise ValueError(f"t={t} outside [0, 0]")
            c = self.checkpoints[0]
            return c.params.copy(), c.velocity.copy()
        k = self._locate(t)
        a, b = self.checkpoints[k], self.checkpoints[k + 1]
        if t == a.t:
            return a.params.copy(), a.velocity.copy()
        if t == b.t:
            return b.params.copy(), b.velocity.copy()
        dt = b.t - a.t
        s = (t - a.t) / dt
        s2, s3 = s * s, s * s * s
        theta = (
            (2 * s3 - 3 * s2 + 1) * a.params
            + (s3 - 2 * s2 + s) * dt * a.velocity
            + (-2 * s3 + 3 * s2) * b.params
            + (s3 - s2) * dt * b.velocity
        )
        dtheta = (
            (6 * s2 - 6 * s) * a.params / dt
            + (3 * s2 - 4 * s + 1) * a.velocity
            + (-6 * s2 + 6 * s) * b.params / dt
            + (3 * s2 - 2 * s) * b.velocity
        )
        return theta, dtheta

    def to_dict(self) -> dict:
        return {
            "terminated_early": self.terminated_early,
            "stop_reason": self.stop_reason,
            "checkpoints": [
                {
                    "t": c.t,
                    "params": c.params.tolist(),
                    "grad_sq_norm": c.grad_sq_norm,
                    "velocity": c.velocity.tolist(),
                }
                for c in self.checkpoints
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FlowPath":
        cps = tuple(
            Checkpoint(c["t"], np.asarray(c["params"], float), c["grad_sq_norm"], np.asarray(c["velocity"], float))
            for c in data["checkpoints"]
        )
        return cls(cps, data["terminated_early"], data["stop_reason"])


@dataclass(frozen=True)
class IndexSelection:
    t1: float
    value_at_t1: float
    interior: bool
    checkpoint_values: np.ndarray = field(repr=False, default=None)


class NaturalGradientField:
    """``theta -> u(theta)`` for a fixed sample; counts evaluations."""

    def __init__(
        self,
        split: Sample,
        policy_class: PolicyClass,
        lam: float,
        ridge: Optional[float] = None,
        entropy: EntropyEstimator = EntropyEstimator.EXACT,
    ):
        self.cells = as_cells(split)
        self.policy_class = policy_class
        self.lam = lam
        self.ridge = ridge
        self.entropy = entropy
        self.n_evals = 0

    def solve(self, theta: np.ndarray) -> GradientSolve:
        self.n_evals += 1
        return natural_gradient(self.cells, self.policy_class, theta, self.lam, self.ridge, self.entropy)

    def __call__(self, theta: np.ndarray) -> np.ndarray:
        return self.solve(theta).coefficients


def _step(fieldfn: Callable, theta, u0, h, integrator):
    if integrator == Integrator.EULER:
        return theta + h * u0
    k1 = u0
    k2 = fieldfn(theta + 0.5 * h * k1)
    k3 = fieldfn(theta + 0.5 * h * k2)
    k4 = fieldfn(theta + h * k3)
    return theta + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_flow(
    split0: Sample,
    policy_class: PolicyClass,
    init_params: np.ndarray,
    lam: float,
    config: FlowConfig = FlowConfig(),
    ridge: Optional[float] = None,
    entropy: EntropyEstimator = EntropyEstimator.EXACT,
) -> FlowPath:
    """Integrate ``d theta/dt = u(theta)`` with gradients estimated on ``split0``.

    Stops at ``t_max``, when ``u^T F u`` drops below ``config.stop_grad_norm``,
    or (keeping the last good checkpoint) when the state becomes non-finite.
    """
    theta = np.array(init_params, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ValueError("initial parameters must be finite")
    fieldfn = NaturalGradientField(split0, policy_class, lam, ridge, entropy)
    h = config.step_size
    n_steps = int(math.ceil(config.t_max / h - 1e-9))

    sol = fieldfn.solve(theta)
    checkpoints = [Checkpoint(0.0, theta.copy(), sol.grad_sq_norm, sol.coefficients.copy())]
    t = 0.0
    stop_reason = "t_max"
    for k in range(n_steps):
        if sol.grad_sq_norm < config.stop_grad_norm:
            stop_reason = "grad_norm"
            break
        t_next = min((k + 1) * h, config.t_max)
        new_sol = None
        try:
            new_theta = _step(fieldfn, theta, sol.coefficients, t_next - t, config.integrator)
            if np.all(np.isfinite(new_theta)):
                new_sol = fieldfn.solve(new_theta)
        except ValueError:  # non-finite logits in an intermediate stage
            new_sol = None
        if new_sol is None or not np.all(np.isfinite(new_sol.coefficients)):
            logger.warning("flow state became non-finite at t=%g; keeping last good checkpoint", t_next)
            stop_reason = "non_finite"
            break
        theta, sol, t = new_theta, new_sol, t_next
        if (k + 1) % config.checkpoint_every == 0 or k + 1 == n_steps:
            checkpoints.append(Checkpoint(t, theta.copy(), sol.grad_sq_norm, sol.coefficients.copy()))
    if checkpoints[-1].t != t:
        checkpoints.append(Checkpoint(t, theta.copy(), sol.grad_sq_norm, sol.coefficients.copy()))
    logger.debug("flow finished at t=%g (%s) after %d field evaluations", t, stop_reason, fieldfn.n_evals)
    return FlowPath(tuple(checkpoints), stop_reason != "t_max", stop_reason)


def golden_section_max(fun: Callable[[float], float], lo: float, hi: float, tol: float):
    """Golden-section search for a maximum of a unimodal ``fun`` on ``[lo, hi]``.

    Returns ``(a, b, x, fx)``: the final bracket and its best interior probe.
    """
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fun(d)
    return (a, b, c, fc) if fc >= fd else (a, b, d, fd)


def select_index(
    flow_path: FlowPath,
    split1: Sample,
    policy_class: PolicyClass,
    config: SoftValueConfig = SoftValueConfig(),
    tol: float = 1e-4,
) -> IndexSelection:
    """Choose the flow time maximizing the soft value on the selection split.

    The best checkpoint is refined by golden-section search over its
    neighbouring interval; when the derivative of the interpolated objective
    changes sign inside the final bracket the stationary point is then
    located to machine precision.
    """
    cells = as_cells(split1)
    times = flow_path.times
    values = np.array(
        [empirical_soft_value(cells, policy_class, c.params, config) for c in flow_path.checkpoints]
    )
    k = int(np.argmax(values))
    best = IndexSelection(float(times[k]), float(values[k]), False, values)
    if len(times) == 1:
        return best

    def objective(t):
        return empirical_soft_value(cells, policy_class, flow_path.params_at(t), config)

    def derivative(t):
        theta, dtheta = flow_path._hermite(t)
        grad = soft_value_and_gradient(cells, policy_class, theta, config.lam, config.entropy_estimator)[1]
        return float(grad @ dtheta)

    lo, hi = float(times[max(k - 1, 0)]), float(times[min(k + 1, len(times) - 1)])
    a, b, t_g, _ = golden_section_max(objective, lo, hi, tol)
    a, b = max(lo, a - tol), min(hi, b + tol)
    da, db = derivative(a), derivative(b)
    if not (da > 0 > db):
        return best
    t1 = brentq(derivative, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    value = objective(t1)
    if value < values[k] or not (0.0 < t1 < flow_path.t_last):
        return best
    return IndexSelection(float(t1), float(value), True, values)
