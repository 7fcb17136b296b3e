import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from obmlab.errors import GeometryInvalid
from obmlab.estimator import error_against_truth, obm_batch, obm_direct, obm_quadratic, relative_gap
from obmlab.markov import kernel_library, sample_path, stationary
from obmlab.poisson import solve_poisson
from obmlab.weights import BatchGeometry

from conftest import centred

# states Z_0..Z_8; f maps state 0 -> -1 and state 1 -> +1
PM_PATH = np.array([0, 1, 1, 0, 1, 0, 0, 1, 1])
PM_F = np.array([-1.0, 1.0])


def _naive(x, b):
    n = len(x)
    mean = sum(x) / n
    batches = [sum(x[s:s + b]) / b for s in range(n - b + 1)]
    return b / (n - b + 1) * sum((y - mean) ** 2 for y in batches)


def test_pm_path_direct_matches_hand_loop():
    x = list(PM_F[PM_PATH[1:]])
    est = obm_direct(PM_PATH, PM_F, BatchGeometry(8, 3))
    assert est.value == pytest.approx(_naive(x, 3), abs=1e-15)


def test_pm_path_quadratic_matches_direct():
    g = BatchGeometry(8, 3)
    d = obm_direct(PM_PATH, PM_F, g)
    q = obm_quadratic(PM_PATH, PM_F, g)
    assert relative_gap(d.value, q.value) <= 1e-14
    assert q.recombined() == pytest.approx(q.value, abs=1e-15)


def test_constant_function_gives_zero():
    assert obm_direct(PM_PATH, np.array([2.0, 2.0]), BatchGeometry(8, 3)).value == 0


def test_single_batch_gives_zero():
    assert obm_direct(PM_PATH, PM_F, BatchGeometry(8, 8)).value == pytest.approx(0, abs=1e-15)


def test_zero_function_components():
    q = obm_quadratic(PM_PATH, np.zeros(2), BatchGeometry(8, 3))
    assert q.value == 0 and q.components == (0, 0, 0)


def test_error_single_batch_is_minus_sigma2(two_state):
    pi = stationary(two_state)
    f = centred(two_state, [0.0, 1.0])
    sol = solve_poisson(two_state, pi, f)
    path = sample_path(two_state, pi.probs, 64, seed=3)
    est = obm_direct(path, f, BatchGeometry(64, 64))
    assert error_against_truth(est, sol.sigma2_inf) == pytest.approx(-sol.sigma2_inf, abs=1e-14)
    zero = obm_direct(path, centred(two_state, [0.0, 0.0]), BatchGeometry(64, 8))
    assert error_against_truth(zero, 0.0) == 0


def test_short_path_rejected():
    with pytest.raises(GeometryInvalid):
        obm_direct(PM_PATH, PM_F, BatchGeometry(20, 3))


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 300).flatmap(lambda n: st.tuples(st.just(n), st.integers(1, n), st.integers(0, 2 ** 32))))
def test_direct_quadratic_and_batch_agree(args):
    n, b, seed = args
    k = kernel_library("dirichlet_random", {"n_states": 4, "seed": seed % 1000})
    pi = stationary(k)
    f = centred(k, np.random.default_rng(seed).uniform(-1, 1, 4))
    path = sample_path(k, pi.probs, n, seed)
    g = BatchGeometry(n, b)
    d = obm_direct(path, f, g).value
    q = obm_quadratic(path, f, g).value
    batch = obm_batch(f.values[path.states[1:]][None, :], b)[0]
    # b = n makes the exact value 0, so the quadratic form only cancels to rounding level
    assert abs(d - q) <= 1e-10 * abs(d) + 1e-12
    assert abs(d - batch) <= 1e-12 * max(abs(d), 1.0)


def test_obm_batch_rows_independent():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(5, 50))
    batch = obm_batch(X, 7)
    for i in range(5):
        assert batch[i] == pytest.approx(_naive(list(X[i]), 7), rel=1e-12)


def test_direct_is_shift_invariant():
    x = np.random.default_rng(2).normal(size=40)
    states = np.arange(41) % 40
    vals = np.concatenate([x[-1:], x[:-1]])
    g = BatchGeometry(40, 6)
    a = obm_direct(states, vals, g).value
    b = obm_direct(states, vals + 3.5, g).value
    assert a == pytest.approx(b, rel=1e-12)
