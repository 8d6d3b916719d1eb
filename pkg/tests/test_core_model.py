import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from npgflow.core_model import (
    CellSums,
    DegenerateSplitError,
    LinearSoftmax,
    LoggedDataset,
    OverlapError,
    TabularSoftmax,
    action_probabilities,
    read_jsonl,
    score_features,
    split_dataset,
    write_jsonl,
)
from npgflow.envs import random_env, sample_logged_dataset


def _dataset(n, K=2, seed=0):
    rng = np.random.default_rng(seed)
    return LoggedDataset(
        rng.integers(0, 3, n), rng.integers(0, K, n), rng.random(n), np.full((n, K), 1.0 / K)
    )


def _largest_remainder_exact(n, fractions):
    quotas = [Fraction(f).limit_denominator(10**6) * n for f in fractions]
    sizes = [int(q) for q in quotas]
    rema = [q - s for q, s in zip(quotas, sizes)]
    for i in sorted(range(3), key=lambda i: (-rema[i], i))[: n - sum(sizes)]:
        sizes[i] += 1
    return tuple(sizes)


class TestSplit:
    def test_equal_thirds(self):
        assert split_dataset(_dataset(300), (1 / 3, 1 / 3, 1 / 3), 0).sizes() == (100, 100, 100)

    def test_largest_remainder_rule(self):
        expected = _largest_remainder_exact(10, (0.5, 0.25, 0.25))
        assert expected == (5, 3, 2)
        assert split_dataset(_dataset(10), (0.5, 0.25, 0.25), 4).sizes() == expected

    @pytest.mark.parametrize("n", [3, 7, 11, 100, 1001])
    def test_sizes_match_exact_rule(self, n):
        for fr in [(1 / 3, 1 / 3, 1 / 3), (0.2, 0.3, 0.5), (0.6, 0.3, 0.1)]:
            if min(_largest_remainder_exact(n, fr)) == 0:
                continue
            assert split_dataset(_dataset(n), fr, 1).sizes() == _largest_remainder_exact(n, fr)

    def test_deterministic(self):
        d = _dataset(50)
        a, b = split_dataset(d, seed=7), split_dataset(d, seed=7)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_partition_over_many_seeds(self):
        d = _dataset(31)
        for seed in range(1000):
            parts = list(split_dataset(d, seed=seed))
            joined = np.concatenate(parts)
            assert np.array_equal(np.sort(joined), np.arange(31))
            assert max(p.size for p in parts) - min(p.size for p in parts) <= 1

    def test_degenerate(self):
        with pytest.raises(DegenerateSplitError, match="degenerate split"):
            split_dataset(_dataset(2), seed=0)

    def test_bad_fractions(self):
        with pytest.raises(ValueError):
            split_dataset(_dataset(10), (0.5, 0.5, 0.0))


class TestDatasetValidation:
    def test_overlap_error_names_record(self):
        props = np.array([[0.5, 0.5], [0.995, 0.005], [0.5, 0.5]])
        with pytest.raises(OverlapError, match="record 1"):
            LoggedDataset(np.zeros(3, int), np.zeros(3, int), np.zeros(3), props)

    def test_propensities_must_sum_to_one(self):
        with pytest.raises(ValueError, match="sum to 1"):
            LoggedDataset(np.zeros(1, int), np.zeros(1, int), np.zeros(1), np.array([[0.5, 0.6]]))

    def test_reward_range(self):
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            LoggedDataset(np.zeros(1, int), np.zeros(1, int), np.array([1.5]), np.array([[0.5, 0.5]]))

    def test_action_range(self):
        with pytest.raises(ValueError):
            LoggedDataset(np.zeros(1, int), np.array([2]), np.zeros(1), np.array([[0.5, 0.5]]))

    def test_immutable(self):
        d = _dataset(5)
        with pytest.raises(ValueError):
            d.rewards[0] = 0.3


class TestPolicyClass:
    def test_uniform_tabular(self):
        pc = TabularSoftmax(1, 2)
        np.testing.assert_array_equal(action_probabilities(pc, np.zeros(1), 0), [0.5, 0.5])

    def test_linear_closed_form(self):
        pc = LinearSoftmax.from_table(np.array([[[1.0], [0.0]]]))
        p = action_probabilities(pc, np.array([2.0]), 0)
        np.testing.assert_allclose(p, [np.e**2 / (np.e**2 + 1), 1 / (np.e**2 + 1)], rtol=0, atol=1e-15)
        np.testing.assert_allclose(p, [0.8808, 0.1192], atol=1e-4)

    def test_shift_invariance(self):
        base = np.array([[[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]])
        shifted = base + np.array([1.0, 0.0])
        theta = np.array([0.3, -1.2])
        pc0, pc1 = LinearSoftmax.from_table(base), LinearSoftmax.from_table(shifted)
        # every logit moves by theta[0]
        np.testing.assert_allclose(action_probabilities(pc0, theta, 0), action_probabilities(pc1, theta, 0), atol=1e-15)

    def test_non_finite(self):
        with pytest.raises(ValueError, match="non-finite"):
            action_probabilities(TabularSoftmax(1, 2), np.array([np.inf]), 0)

    def test_tabular_scores_uniform(self):
        np.testing.assert_array_equal(score_features(TabularSoftmax(1, 2), np.zeros(1), 0), [[0.5], [-0.5]])

    def test_constant_features_zero_score(self):
        pc = LinearSoftmax.from_table(np.ones((2, 3, 4)))
        np.testing.assert_array_equal(score_features(pc, np.arange(4.0), 1), np.zeros((3, 4)))

    def test_dense_contexts(self):
        pc = LinearSoftmax.action_interactions(2, 3)
        x = np.array([0.5, -1.0])
        theta = np.arange(pc.dim) * 0.1
        p = action_probabilities(pc, theta, x)
        logits = np.array([theta[0:3] @ [0.5, -1, 1], theta[3:6] @ [0.5, -1, 1], 0.0])
        np.testing.assert_allclose(p, np.exp(logits) / np.exp(logits).sum(), atol=1e-15)

    @pytest.mark.parametrize(
        "pc, contexts",
        [
            (TabularSoftmax(3, 4), np.arange(3)),
            (LinearSoftmax.from_table(np.random.default_rng(0).normal(size=(3, 4, 5))), np.arange(3)),
            (LinearSoftmax.action_interactions(2, 3), np.random.default_rng(1).normal(size=(4, 2))),
        ],
    )
    def test_scores_match_central_differences(self, pc, contexts):
        theta = np.random.default_rng(2).normal(size=pc.dim)
        s = pc.scores(theta, contexts)
        h = 1e-5
        for j in range(pc.dim):
            e = np.zeros(pc.dim)
            e[j] = h
            fd = (pc.log_probabilities(theta + e, contexts) - pc.log_probabilities(theta - e, contexts)) / (2 * h)
            np.testing.assert_allclose(s[:, :, j], fd, atol=1e-6)

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(st.floats(-20, 20), min_size=6, max_size=6),
        st.integers(0, 2),
    )
    def test_score_centering(self, theta, ctx):
        pc = TabularSoftmax(3, 3)
        theta = np.array(theta)
        p = action_probabilities(pc, theta, ctx)
        assert np.all(p > 0) and abs(p.sum() - 1) < 1e-12
        s = score_features(pc, theta, ctx)
        assert np.max(np.abs(p @ s)) <= 1e-10

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=5, max_size=5))
    def test_linear_score_centering(self, theta):
        pc = LinearSoftmax.from_table(np.random.default_rng(3).normal(size=(2, 4, 5)))
        theta = np.array(theta)
        p = pc.probabilities(theta, np.arange(2))
        s = pc.scores(theta, np.arange(2))
        assert np.max(np.abs(np.einsum("uk,ukd->ud", p, s))) <= 1e-10


class TestCellSums:
    def test_matches_per_record_average(self):
        env = random_env(4, 3, seed=5)
        data = sample_logged_dataset(env, None, 500, 3)
        pc = TabularSoftmax(4, 3)
        theta = np.random.default_rng(0).normal(size=pc.dim)
        f = np.random.default_rng(1).normal(size=(4, 3))
        cells = CellSums.from_dataset(data)
        probs = pc.probabilities(theta, cells.contexts)
        # per-record oracle
        expected = 0.0
        for r in data.records():
            pi = action_probabilities(pc, theta, r.context)[r.action]
            expected += pi / r.propensities[r.action] * (f[r.context, r.action] + r.reward)
        expected /= len(data)
        got = cells.weighted_mean(probs, f[cells.contexts]) + float(np.sum(probs * cells.reward) / cells.total)
        assert got == pytest.approx(expected, rel=1e-12)

    def test_dense_units(self):
        rng = np.random.default_rng(0)
        data = LoggedDataset(rng.normal(size=(6, 2)), rng.integers(0, 2, 6), rng.random(6), np.full((6, 2), 0.5))
        cells = data.cells
        assert cells.contexts.shape == (6, 2)
        np.testing.assert_array_equal(cells.mass, np.ones(6))
        np.testing.assert_allclose(cells.inv_prop.sum(axis=1), 2.0)


class TestJsonl:
    def test_roundtrip_discrete(self, tmp_path):
        data = sample_logged_dataset(random_env(3, 2, seed=0), None, 20, 1)
        write_jsonl(data, tmp_path / "d.jsonl")
        lines = (tmp_path / "d.jsonl").read_text().splitlines()
        assert json.loads(lines[0]) == {"K": 2, "context_kind": "discrete"}
        back = read_jsonl(tmp_path / "d.jsonl")
        for name in ("contexts", "actions", "rewards", "propensities"):
            np.testing.assert_array_equal(getattr(back, name), getattr(data, name))

    def test_roundtrip_dense_without_header(self, tmp_path):
        rng = np.random.default_rng(0)
        data = LoggedDataset(rng.normal(size=(4, 3)), rng.integers(0, 2, 4), rng.random(4), np.full((4, 2), 0.5))
        write_jsonl(data, tmp_path / "d.jsonl", header=False)
        back = read_jsonl(tmp_path / "d.jsonl")
        assert back.context_kind == "dense"
        np.testing.assert_array_equal(back.contexts, data.contexts)

    def test_header_mismatch(self, tmp_path):
        p = tmp_path / "d.jsonl"
        p.write_text('{"K": 3}\n{"context": 0, "action": 0, "reward": 1, "propensities": [0.5, 0.5]}\n')
        with pytest.raises(ValueError, match="K=3"):
            read_jsonl(p)

    def test_floor_enforced_on_read(self, tmp_path):
        p = tmp_path / "d.jsonl"
        p.write_text('{"context": 0, "action": 0, "reward": 1, "propensities": [0.99, 0.01]}\n')
        with pytest.raises(OverlapError, match="record 0"):
            read_jsonl(p, overlap_floor=0.05)
