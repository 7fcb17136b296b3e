import numpy as np
import pytest

from obmlab.markov import kernel_library, stationary
from obmlab.poisson import CenteredFunction


@pytest.fixture
def two_state():
    return kernel_library("two_state", {"a": 0.3, "b": 0.1})


@pytest.fixture
def symmetric_two_state():
    return kernel_library("two_state", {"a": 0.25, "b": 0.25})


@pytest.fixture
def lazy5():
    return kernel_library("lazy_cycle", {"m": 5})


@pytest.fixture
def iid3():
    return kernel_library("iid", {"pi": [0.2, 0.5, 0.3]})


def centred(kernel, raw):
    return CenteredFunction.center(np.asarray(raw, dtype=float), stationary(kernel))


def brute_pairwise_tv(P, t):
    Pt = np.linalg.matrix_power(P, t)
    S = len(P)
    return max(0.5 * np.abs(Pt[i] - Pt[j]).sum() for i in range(S) for j in range(S))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
