import numpy as np
import pytest

from semantic_control.fixtures import toy_a_lm, toy_a_linear_verifier, toy_a_verifier
from semantic_control.toy_models import TabularJointLM


@pytest.fixture(scope="session")
def lm():
    return toy_a_lm()


@pytest.fixture(scope="session")
def verifier():
    return toy_a_verifier()


@pytest.fixture(scope="session")
def linear_verifier():
    return toy_a_linear_verifier()


@pytest.fixture(scope="session")
def factorized_lm():
    scores = np.random.default_rng(5).normal(0.0, 1.5, size=(4, 4))
    return TabularJointLM.factorized(scores)


@pytest.fixture(scope="session")
def small_lm():
    return TabularJointLM(vocab_size=4, horizon=5, sigma=2.0, random_state=3).fit()


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
