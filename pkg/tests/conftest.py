import time

import numpy as np
import pytest

from npgflow.core_model import LoggedDataset
from npgflow.envs import fixture_a, random_env


@pytest.fixture
def env_a():
    return fixture_a()


@pytest.fixture
def env_r():
    return random_env(5, 3, seed=1)


def one_record(action=0, reward=1.0, propensities=(0.5, 0.5), context=0):
    return LoggedDataset(
        np.array([context]), np.array([action]), np.array([reward]), np.array([propensities])
    )


class CampaignCache:
    """Memoized verification campaigns keyed by (env name, N); shared across modules."""

    envs = {"fixture_a": lambda: fixture_a(), "random_5x3": lambda: random_env(5, 3, seed=1)}

    def __init__(self):
        self._reports = {}
        self.seconds = {}
        self.runs = {}

    def env(self, name):
        return self.envs[name]()

    def __call__(self, name, N, seeds):
        from npgflow.diagnostics import run_campaign
        from npgflow.learner import LearnerConfig

        store = self._reports.setdefault((name, N), {})
        missing = [s for s in seeds if s not in store]
        if missing:
            t0 = time.perf_counter()
            reports = run_campaign(self.env(name), "tabular", N, missing, LearnerConfig(lam=0.5))
            self.seconds[(name, N)] = self.seconds.get((name, N), 0.0) + time.perf_counter() - t0
            self.runs[(name, N)] = self.runs.get((name, N), 0) + len(missing)
            store.update(zip(missing, reports))
        return [store[s] for s in seeds]


@pytest.fixture(scope="session")
def campaigns():
    return CampaignCache()


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance summary")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip("]"))):
            terminalreporter.write_line(line)
