import sys
import numpy as np
import pytest
from hypothesis import strategies as st

from offline_pms import Policy, TabularMdp
from offline_pms.envs import FROZEN_LAKE_4X4, GridworldSpec, build_gridworld


def random_mdp(rng, S=4, A=3, gamma=0.9, sparse=False) -> TabularMdp:
    P = rng.random((S, A, S))
    if sparse:
        P *= rng.random((S, A, S)) < 0.5
        P[np.arange(S), :, np.arange(S)] += 1e-3  # keep rows nonzero
    P /= P.sum(axis=2, keepdims=True)
    nu = rng.random(S)
    return TabularMdp(P, rng.normal(size=(S, A)), gamma, nu / nu.sum())


def random_policy(rng, S, A) -> Policy:
    p = rng.random((S, A)) + 0.05
    return Policy(p / p.sum(axis=1, keepdims=True))


def two_state_chain(gamma=0.9) -> TabularMdp:
    """Two states, two actions: action 0 stays, action 1 switches with prob 0.7."""
    P = np.zeros((2, 2, 2))
    P[0, 0] = [0.9, 0.1]
    P[1, 0] = [0.1, 0.9]
    P[0, 1] = [0.3, 0.7]
    P[1, 1] = [0.7, 0.3]
    r = np.array([[0.0, 0.2], [1.0, 0.5]])
    return TabularMdp(P, r, gamma, np.array([1.0, 0.0]))


@st.composite
def mdp_and_policy(draw, max_states=5, max_actions=3):
    seed = draw(st.integers(0, 2**32 - 1))
    S = draw(st.integers(1, max_states))
    A = draw(st.integers(1, max_actions))
    gamma = draw(st.sampled_from([0.0, 0.5, 0.9, 0.99]))
    rng = np.random.default_rng(seed)
    return random_mdp(rng, S, A, gamma), random_policy(rng, S, A)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def frozen_lake():
    spec = GridworldSpec.from_layout(FROZEN_LAKE_4X4)
    return build_gridworld(spec, 0.95)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
