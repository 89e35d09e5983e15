import hypothesis
import numpy as np
import pytest

from dptd.mdp import Policy, TabularMdp, chain, sample_dataset

hypothesis.settings.register_profile("default", deadline=None, max_examples=100)
hypothesis.settings.load_profile("default")


def random_tabular(rng, k=3, n_actions=2, gamma=0.9):
    P = rng.dirichlet(np.ones(k), size=(k, n_actions))
    R = rng.normal(size=(k, n_actions))
    return TabularMdp(P, R, gamma)


def random_policy(rng, k, n_actions):
    return Policy(rng.dirichlet(np.ones(n_actions), size=k))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def chain5():
    return chain(5)


@pytest.fixture(scope="session")
def chain5_dataset(chain5):
    return sample_dataset(chain5, Policy.uniform(5, 2), np.random.default_rng(0), 2000)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
