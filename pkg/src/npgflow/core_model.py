"""Logged bandit data, data splitting and softmax policy classes."""
from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, Iterator, Optional, Sequence, Union

import numpy as np

__all__ = [
    "OverlapError",
    "DegenerateSplitError",
    "LoggedInteraction",
    "LoggedDataset",
    "CellSums",
    "SplitTriple",
    "split_dataset",
    "PolicyClass",
    "LinearSoftmax",
    "TabularSoftmax",
    "action_probabilities",
    "score_features",
    "read_jsonl",
    "write_jsonl",
]

DEFAULT_OVERLAP_FLOOR = 0.01

Context = Union[int, np.ndarray]


class OverlapError(ValueError):
    """A behavior propensity falls below the configured overlap floor."""


class DegenerateSplitError(ValueError):
    """A requested split would be empty."""


@dataclass(frozen=True)
class LoggedInteraction:
    context: Context
    action: int
    reward: float
    propensities: np.ndarray


@dataclass(frozen=True, eq=False)
class LoggedDataset:
    """Column-wise store of i.i.d. logged bandit records.

    Parameters
    ----------
    contexts : array, shape (n,) of ints or (n, p) of floats
        Discrete context ids (tabular settings) or dense feature vectors.
    actions : array of int, shape (n,)
    rewards : array of float, shape (n,), entries in [0, 1]
    propensities : array, shape (n, K)
        Full behavior action distribution logged with each record.
    overlap_floor : float
        Every logged propensity must be at least this large.
    """

    contexts: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    propensities: np.ndarray
    overlap_floor: float = DEFAULT_OVERLAP_FLOOR

    def __post_init__(self):
        contexts = np.asarray(self.contexts)
        if contexts.ndim == 1 and np.issubdtype(contexts.dtype, np.integer):
            contexts = contexts.astype(np.int64)
        elif contexts.ndim == 2:
            contexts = contexts.astype(float)
        else:
            raise ValueError(
                "contexts must be a 1d array of integer ids or a 2d array of features"
            )
        actions = np.asarray(self.actions)
        if not np.issubdtype(actions.dtype, np.integer):
            raise ValueError("actions must be integers")
        actions = actions.astype(np.int64)
        rewards = np.asarray(self.rewards, dtype=float)
        propensities = np.atleast_2d(np.asarray(self.propensities, dtype=float))

        n = actions.shape[0]
        if n == 0:
            raise ValueError("dataset must be nonempty")
        if contexts.shape[0] != n or rewards.shape != (n,) or propensities.shape[0] != n:
            raise ValueError("contexts, actions, rewards and propensities disagree in length")
        K = propensities.shape[1]
        if np.any(actions < 0) or np.any(actions >= K):
            raise ValueError(f"actions must lie in [0, {K})")
        if not np.all(np.isfinite(rewards)) or np.any(rewards < 0) or np.any(rewards > 1):
            raise ValueError("rewards must lie in [0, 1]")
        if not self.overlap_floor > 0:
            raise ValueError("overlap_floor must be positive")
        bad = np.flatnonzero(np.abs(propensities.sum(axis=1) - 1.0) > 1e-9)
        if bad.size:
            raise ValueError(f"propensities of record {bad[0]} do not sum to 1")
        low = np.flatnonzero((propensities < self.overlap_floor).any(axis=1))
        if low.size:
            raise OverlapError(
                f"record {low[0]} has a propensity below the overlap floor "
                f"{self.overlap_floor}: {propensities[low[0]].tolist()}"
            )

        for name, value in [
            ("contexts", contexts),
            ("actions", actions),
            ("rewards", rewards),
            ("propensities", propensities),
        ]:
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    def __len__(self) -> int:
        return self.actions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.propensities.shape[1]

    @property
    def context_kind(self) -> str:
        return "discrete" if self.contexts.ndim == 1 else "dense"

    @property
    def logged_propensities(self) -> np.ndarray:
        """pi_b(A_i | X_i) for every record."""
        return self.propensities[np.arange(len(self)), self.actions]

    def subset(self, indices: Sequence[int]) -> "LoggedDataset":
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size == 0:
            raise DegenerateSplitError("degenerate split")
        return LoggedDataset(
            self.contexts[idx],
            self.actions[idx],
            self.rewards[idx],
            self.propensities[idx],
            overlap_floor=self.overlap_floor,
        )

    def records(self) -> Iterator[LoggedInteraction]:
        for i in range(len(self)):
            context = (
                int(self.contexts[i]) if self.context_kind == "discrete" else self.contexts[i]
            )
            yield LoggedInteraction(
                context, int(self.actions[i]), float(self.rewards[i]), self.propensities[i]
            )

    @classmethod
    def from_records(
        cls, records: Iterable[LoggedInteraction], overlap_floor: float = DEFAULT_OVERLAP_FLOOR
    ) -> "LoggedDataset":
        records = list(records)
        if not records:
            raise ValueError("dataset must be nonempty")
        return cls(
            np.array([r.context for r in records]),
            np.array([r.action for r in records]),
            np.array([r.reward for r in records], dtype=float),
            np.array([r.propensities for r in records], dtype=float),
            overlap_floor=overlap_floor,
        )

    @cached_property
    def cells(self) -> "CellSums":
        return CellSums.from_dataset(self)


@dataclass(frozen=True)
class CellSums:
    """Sufficient statistics of a sample for every IS-weighted functional used here.

    Every empirical average of the form ``P_N[(pi/pi_b)(A|X) * (c(X,A) + Y * d(X,A))]``
    and every context average ``P_N[h(X)]`` only depends on the sample through
    per-(context, action) sums. Records sharing a discrete context id are pooled;
    dense contexts form one unit per record. A population measure ``P_{q, pi_b}``
    fits the same mould with ``mass = q_X``, ``inv_prop = q_X`` and
    ``reward = q_X * Q``.

    Attributes
    ----------
    contexts : distinct context units, shape (U,) or (U, p)
    mass : shape (U,), number (or probability mass) of records per unit
    inv_prop : shape (U, K), sum of ``1 / pi_b(a | x)`` over records at (x, a)
    reward : shape (U, K), sum of ``Y / pi_b(a | x)`` over records at (x, a)
    total : normalizing count n (1 for a population measure)
    """

    contexts: np.ndarray
    mass: np.ndarray
    inv_prop: np.ndarray
    reward: np.ndarray
    total: float

    @classmethod
    def from_dataset(cls, dataset: LoggedDataset) -> "CellSums":
        inv = 1.0 / dataset.logged_propensities
        K = dataset.n_actions
        if dataset.context_kind == "discrete":
            units, unit_of = np.unique(dataset.contexts, return_inverse=True)
            mass = np.bincount(unit_of, minlength=units.size).astype(float)
        else:
            units = dataset.contexts
            unit_of = np.arange(len(dataset))
            mass = np.ones(len(dataset))
        inv_prop = np.zeros((units.shape[0], K))
        reward = np.zeros((units.shape[0], K))
        np.add.at(inv_prop, (unit_of, dataset.actions), inv)
        np.add.at(reward, (unit_of, dataset.actions), inv * dataset.rewards)
        return cls(units, mass, inv_prop, reward, float(len(dataset)))

    def weighted_mean(self, probs: np.ndarray, values: np.ndarray) -> float:
        """``P_N[(pi/pi_b)(A|X) f(X, A)]`` for a table ``values[u, a] = f(x_u, a)``."""
        return float(np.sum(probs * self.inv_prop * values) / self.total)

    def context_mean(self, values: np.ndarray) -> float:
        """``P_N[h(X)]`` for ``values[u] = h(x_u)``."""
        return float(np.dot(self.mass, values) / self.total)


@dataclass(frozen=True)
class SplitTriple:
    """Three disjoint index sets: warm start, gradient field, index selection."""

    split_minus1: np.ndarray
    split0: np.ndarray
    split1: np.ndarray

    def __iter__(self):
        return iter((self.split_minus1, self.split0, self.split1))

    def sizes(self) -> tuple[int, int, int]:
        return tuple(int(s.size) for s in self)

    def views(self, dataset: LoggedDataset) -> tuple[LoggedDataset, LoggedDataset, LoggedDataset]:
        return tuple(dataset.subset(idx) for idx in self)


def _largest_remainder(n: int, fractions: Sequence[float]) -> list[int]:
    quotas = [f * n for f in fractions]
    # tolerance keeps exact divisions like 300/3 from flooring to 99
    sizes = [int(math.floor(q + 1e-9)) for q in quotas]
    remainders = [round(q - s, 9) for q, s in zip(quotas, sizes)]
    leftover = n - sum(sizes)
    order = sorted(range(len(fractions)), key=lambda i: (-remainders[i], i))
    for i in order[:leftover]:
        sizes[i] += 1
    return sizes


def split_dataset(
    dataset: LoggedDataset,
    fractions: Sequence[float] = (1 / 3, 1 / 3, 1 / 3),
    seed: int = 0,
) -> SplitTriple:
    """Shuffle with ``seed`` and cut into three disjoint splits.

    Sizes follow the largest-remainder rule, ties going to the earlier split.
    """
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ValueError("fractions must be three positive numbers")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    n = len(dataset)
    sizes = _largest_remainder(n, fractions)
    if min(sizes) == 0:
        raise DegenerateSplitError("degenerate split")
    perm = np.random.default_rng(seed).permutation(n)
    bounds = np.cumsum([0] + sizes)
    parts = [np.sort(perm[bounds[i] : bounds[i + 1]]) for i in range(3)]
    return SplitTriple(*parts)


class PolicyClass(ABC):
    """Softmax policies with logits linear in the parameters.

    Sub-classes provide ``features(contexts)`` of shape (U, K, d) so that
    ``logits = features @ theta``.
    """

    n_actions: int
    dim: int
    #: whether the induced set of policies is convex
    convex: bool = False

    @abstractmethod
    def features(self, contexts: np.ndarray) -> np.ndarray:
        ...

    def logits(self, theta: np.ndarray, contexts: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"expected parameters of shape ({self.dim},), got {theta.shape}")
        z = self.features(contexts) @ theta
        if not np.all(np.isfinite(z)):
            raise ValueError("non-finite logits")
        return z

    def log_probabilities(self, theta: np.ndarray, contexts: np.ndarray) -> np.ndarray:
        z = self.logits(theta, contexts)
        z = z - z.max(axis=1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=1, keepdims=True))

    def probabilities(self, theta: np.ndarray, contexts: np.ndarray) -> np.ndarray:
        z = self.logits(theta, contexts)
        e = np.exp(z - z.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def scores(self, theta: np.ndarray, contexts: np.ndarray) -> np.ndarray:
        """Centered scores ``d/dtheta log pi(a|x)``, shape (U, K, d)."""
        f = self.features(contexts)
        p = self.probabilities(theta, contexts)
        return f - np.einsum("uk,ukd->ud", p, f)[:, None, :]

    def evaluate(self, theta: np.ndarray, contexts: np.ndarray):
        """``(probs, log_probs, scores)`` from a single feature evaluation."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"expected parameters of shape ({self.dim},), got {theta.shape}")
        f = self.features(contexts)
        z = f @ theta
        if not np.all(np.isfinite(z)):
            raise ValueError("non-finite logits")
        z = z - z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        p = np.exp(logp)
        return p, logp, f - np.einsum("uk,ukd->ud", p, f)[:, None, :]

    def zeros(self) -> np.ndarray:
        return np.zeros(self.dim)


class LinearSoftmax(PolicyClass):
    """``pi_theta(a|x) proportional to exp(theta . f(x, a))``.

    ``feature_fn`` maps an array of contexts to features of shape (U, K, d).
    """

    def __init__(self, feature_fn: Callable[[np.ndarray], np.ndarray], n_actions: int, dim: int):
        self.feature_fn = feature_fn
        self.n_actions = int(n_actions)
        self.dim = int(dim)

    def features(self, contexts):
        f = np.asarray(self.feature_fn(np.asarray(contexts)), dtype=float)
        if f.shape[1:] != (self.n_actions, self.dim):
            raise ValueError(
                f"feature map returned shape {f.shape}, expected (*, {self.n_actions}, {self.dim})"
            )
        return f

    @classmethod
    def from_table(cls, table: np.ndarray) -> "LinearSoftmax":
        """Features for discrete context ids given as an (M, K, d) table."""
        table = np.array(table, dtype=float)
        table.setflags(write=False)
        M, K, d = table.shape

        def lookup(contexts):
            ids = np.asarray(contexts)
            if ids.ndim != 1 or np.any(ids < 0) or np.any(ids >= M):
                raise ValueError(f"context ids must lie in [0, {M})")
            return table[ids.astype(np.int64)]

        policy = cls(lookup, K, d)
        policy.table = table
        return policy

    @classmethod
    def action_interactions(cls, n_features: int, n_actions: int, intercept: bool = True):
        """Per-action linear logits on dense contexts, last action pinned to zero."""
        p = n_features + int(intercept)
        K = n_actions
        dim = (K - 1) * p

        def interactions(contexts):
            x = np.atleast_2d(np.asarray(contexts, dtype=float))
            if intercept:
                x = np.hstack([x, np.ones((x.shape[0], 1))])
            f = np.zeros((x.shape[0], K, dim))
            for a in range(K - 1):
                f[:, a, a * p : (a + 1) * p] = x
            return f

        return cls(interactions, K, dim)


class TabularSoftmax(PolicyClass):
    """Free softmax logits per discrete context; the last action's logit is pinned at 0.

    With one parameter block of size K-1 per context this class is the whole
    interior of the simplex at every context (the locally nonparametric case).
    """

    convex = True

    def __init__(self, n_contexts: int, n_actions: int):
        if n_actions < 2:
            raise ValueError("need at least two actions")
        self.n_contexts = int(n_contexts)
        self.n_actions = int(n_actions)
        self.dim = self.n_contexts * (self.n_actions - 1)

    def _ids(self, contexts):
        ids = np.asarray(contexts)
        if ids.ndim != 1 or not np.issubdtype(ids.dtype, np.integer):
            raise ValueError("tabular policies take integer context ids")
        if np.any(ids < 0) or np.any(ids >= self.n_contexts):
            raise ValueError(f"context ids must lie in [0, {self.n_contexts})")
        return ids.astype(np.int64)

    def features(self, contexts):
        ids = self._ids(contexts)
        Km1 = self.n_actions - 1
        f = np.zeros((ids.size, self.n_actions, self.dim))
        rows = np.repeat(np.arange(ids.size), Km1)
        acts = np.tile(np.arange(Km1), ids.size)
        f[rows, acts, (ids[:, None] * Km1 + np.arange(Km1)).ravel()] = 1.0
        return f

    def logits(self, theta, contexts):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"expected parameters of shape ({self.dim},), got {theta.shape}")
        ids = self._ids(contexts)
        block = theta.reshape(self.n_contexts, self.n_actions - 1)[ids]
        z = np.hstack([block, np.zeros((ids.size, 1))])
        if not np.all(np.isfinite(z)):
            raise ValueError("non-finite logits")
        return z

    def params_from_probabilities(self, probs: np.ndarray) -> np.ndarray:
        """Gauge-fixed logits reproducing an (M, K) table of interior policies."""
        logp = np.log(np.asarray(probs, dtype=float))
        return (logp[:, :-1] - logp[:, -1:]).ravel()


def _single(context, policy_class: PolicyClass) -> np.ndarray:
    if isinstance(policy_class, TabularSoftmax) or np.ndim(context) == 0:
        return np.array([context])
    return np.asarray(context, dtype=float)[None, :]


def action_probabilities(policy_class: PolicyClass, params: np.ndarray, context) -> np.ndarray:
    return policy_class.probabilities(params, _single(context, policy_class))[0]


def score_features(policy_class: PolicyClass, params: np.ndarray, context) -> np.ndarray:
    """K x d matrix whose rows are the centered scores at one context."""
    return policy_class.scores(params, _single(context, policy_class))[0]


def write_jsonl(dataset: LoggedDataset, path: Union[str, Path], header: bool = True) -> None:
    with open(path, "w") as fh:
        if header:
            fh.write(json.dumps({"K": dataset.n_actions, "context_kind": dataset.context_kind}))
            fh.write("\n")
        for rec in dataset.records():
            context = rec.context if isinstance(rec.context, int) else rec.context.tolist()
            row = {
                "context": context,
                "action": rec.action,
                "reward": rec.reward,
                "propensities": rec.propensities.tolist(),
            }
            fh.write(json.dumps(row))
            fh.write("\n")


def read_jsonl(
    path: Union[str, Path], overlap_floor: float = DEFAULT_OVERLAP_FLOOR
) -> LoggedDataset:
    """Load a JSON Lines dataset; an optional first line ``{"K":..., "context_kind":...}``."""
    header: Optional[dict] = None
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "action" not in obj:
                if records or header is not None:
                    raise ValueError(f"line {lineno}: header must be the first line")
                header = obj
                continue
            try:
                records.append(
                    LoggedInteraction(
                        obj["context"],
                        int(obj["action"]),
                        float(obj["reward"]),
                        np.asarray(obj["propensities"], dtype=float),
                    )
                )
            except KeyError as err:
                raise ValueError(f"line {lineno}: missing key {err}") from None
    dataset = LoggedDataset.from_records(records, overlap_floor=overlap_floor)
    if header is not None:
        if "K" in header and header["K"] != dataset.n_actions:
            raise ValueError(f"header declares K={header['K']}, records have {dataset.n_actions}")
        kind = header.get("context_kind")
        if kind is not None and kind != dataset.context_kind:
            raise ValueError(f"header declares {kind} contexts, records are {dataset.context_kind}")
    return dataset
