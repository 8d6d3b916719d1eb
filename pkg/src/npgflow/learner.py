"""Cross-fitted debiased policy learning: ERM warm start, flow, index selection."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ._ascent import backtracking_ascent
from .core_model import LoggedDataset, PolicyClass, SplitTriple, split_dataset
from .flow import FlowConfig, FlowPath, IndexSelection, integrate_flow, select_index
from .objective import EntropyEstimator, Sample, SoftValueConfig, empirical_soft_value, soft_value_and_gradient

__all__ = [
    "StageError",
    "ERMConfig",
    "LearnerConfig",
    "DebiasedResult",
    "fit_erm",
    "debiased_policy_learning",
    "baseline_erm_full",
]

logger = logging.getLogger(__name__)


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage


@dataclass(frozen=True)
class ERMConfig:
    max_steps: int = 5000
    learning_rate: float = 1.0
    restarts: int = 5
    tolerance: float = 1e-8
    init_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


@dataclass(frozen=True)
class LearnerConfig:
    lam: float = 0.5
    flow: FlowConfig = field(default_factory=FlowConfig)
    ridge: Optional[float] = None
    erm: ERMConfig = field(default_factory=ERMConfig)
    seed: int = 0
    fractions: tuple = (1 / 3, 1 / 3, 1 / 3)
    entropy_estimator: EntropyEstimator = EntropyEstimator.EXACT
    selection_tol: float = 1e-4

    @property
    def value_config(self) -> SoftValueConfig:
        return SoftValueConfig(self.lam, entropy_estimator=self.entropy_estimator)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["flow"]["integrator"] = self.flow.integrator.value
        out["entropy_estimator"] = EntropyEstimator(self.entropy_estimator).value
        out["fractions"] = list(self.fractions)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "LearnerConfig":
        data = dict(data)
        if "flow" in data:
            data["flow"] = FlowConfig(**data["flow"])
        if "erm" in data:
            data["erm"] = ERMConfig(**data["erm"])
        if "fractions" in data:
            data["fractions"] = tuple(data["fractions"])
        if "entropy_estimator" in data:
            data["entropy_estimator"] = EntropyEstimator(data["entropy_estimator"])
        return cls(**data)


@dataclass(frozen=True)
class DebiasedResult:
    erm_params: np.ndarray
    flow_path: FlowPath
    index_selection: IndexSelection
    final_params: np.ndarray
    values: dict
    splits: SplitTriple

    def to_dict(self) -> dict:
        sel = self.index_selection
        return {
            "erm_params": self.erm_params.tolist(),
            "final_params": self.final_params.tolist(),
            "index_selection": {
                "t1": sel.t1,
                "value_at_t1": sel.value_at_t1,
                "interior": sel.interior,
                "checkpoint_values": np.asarray(sel.checkpoint_values).tolist(),
            },
            "values": self.values,
            "split_sizes": list(self.splits.sizes()),
            "flow_path": self.flow_path.to_dict(),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def fit_erm(
    split: Sample,
    policy_class: PolicyClass,
    lam: float,
    config: ERMConfig = ERMConfig(),
    entropy: EntropyEstimator = EntropyEstimator.EXACT,
) -> np.ndarray:
    """Entropy-regularized ERM by gradient ascent with backtracking, best of several restarts."""
    rng = np.random.default_rng(config.seed)

    def fun(theta):
        return soft_value_and_gradient(split, policy_class, theta, lam, entropy)

    best = None
    for _ in range(config.restarts):
        theta0 = rng.normal(0.0, config.init_scale, policy_class.dim)
        try:
            res = backtracking_ascent(fun, theta0, config.tolerance, config.max_steps, step=config.learning_rate)
        except ValueError:  # non-finite logits
            continue
        if not np.isfinite(res.value) or not np.all(np.isfinite(res.params)):
            continue
        if best is None or res.value > best.value:
            best = res
    if best is None:
        raise RuntimeError("all ERM restarts diverged")
    if not best.converged:
        logger.debug("ERM stopped with gradient norm %.3g", best.grad_norm)
    return best.params


def debiased_policy_learning(
    dataset: LoggedDataset,
    policy_class: PolicyClass,
    config: LearnerConfig = LearnerConfig(),
) -> DebiasedResult:
    """Split, warm-start on split -1, integrate the flow on split 0, select on split 1."""
    if len(dataset) < 3:
        raise ValueError("need at least 3 records")
    try:
        splits = split_dataset(dataset, config.fractions, config.seed)
        views = splits.views(dataset)
    except Exception as err:
        raise StageError("split", err) from err
    split_m1, split0, split1 = views
    vcfg = config.value_config
    try:
        erm = fit_erm(split_m1, policy_class, config.lam, config.erm, config.entropy_estimator)
    except Exception as err:
        raise StageError("erm", err) from err
    try:
        path = integrate_flow(
            split0, policy_class, erm, config.lam, config.flow, config.ridge, config.entropy_estimator
        )
    except Exception as err:
        raise StageError("flow", err) from err
    try:
        sel = select_index(path, split1, policy_class, vcfg, config.selection_tol)
    except Exception as err:
        raise StageError("select", err) from err
    final = path.params_at(sel.t1)
    values = {
        name: {
            "erm": empirical_soft_value(view, policy_class, erm, vcfg),
            "debiased": empirical_soft_value(view, policy_class, final, vcfg),
        }
        for name, view in zip(("split_minus1", "split0", "split1"), views)
    }
    return DebiasedResult(erm, path, sel, final, values, splits)


def baseline_erm_full(
    dataset: Sample,
    policy_class: PolicyClass,
    lam: float,
    config: ERMConfig = ERMConfig(),
    entropy: EntropyEstimator = EntropyEstimator.EXACT,
) -> np.ndarray:
    """ERM on the whole dataset, without splitting or debiasing."""
    return fit_erm(dataset, policy_class, lam, config, entropy)
