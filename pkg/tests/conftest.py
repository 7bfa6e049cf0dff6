import numpy as np
import pytest

from lpo.mdp import chain, random_mdp


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_mdps():
    return [chain(5), chain(4, slip_prob=0.2, sparse_goal_reward=False)] + [
        random_mdp(seed, n_states=4, n_actions=3) for seed in range(5)]


def tv(p, q):
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
