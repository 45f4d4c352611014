import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from innerae.numlin import (
    CareProblem,
    NumericalError,
    is_hurwitz,
    solve_care,
    solve_lyapunov,
    spectral_abscissa,
    stabilizing_gain,
)


def random_stable(rng, n):
    A = rng.normal(size=(n, n))
    return A - (spectral_abscissa(A) + rng.uniform(0.2, 2.0)) * np.eye(n)


@pytest.mark.parametrize(
    "A, Q, X",
    [
        ([[-1.0]], [[2.0]], [[1.0]]),
        ([[-1.0]], [[0.0]], [[0.0]]),
        (np.diag([-1.0, -2.0]), np.eye(2), np.diag([0.5, 0.25])),
    ],
)
def test_lyapunov_examples(A, Q, X):
    np.testing.assert_allclose(solve_lyapunov(A, Q), X, atol=1e-14)


def test_lyapunov_rejects_unstable_and_asymmetric():
    with pytest.raises(NumericalError):
        solve_lyapunov([[0.5]], [[1.0]])
    with pytest.raises(ValueError):
        solve_lyapunov(-np.eye(2), [[1.0, 2.0], [0.0, 1.0]])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_lyapunov_residual(n, seed):
    rng = np.random.default_rng(seed)
    A = random_stable(rng, n)
    Q = rng.normal(size=(n, n))
    Q = Q + Q.T
    X = solve_lyapunov(A, Q)
    res = np.linalg.norm(A.T @ X + X @ A + Q)
    assert res <= 1e-9 * np.linalg.norm(Q)
    assert np.array_equal(X, X.T)


@pytest.mark.parametrize(
    "A, P",
    [(-1.0, math.sqrt(2) - 1), (0.0, 1.0)],
)
def test_care_scalar(A, P):
    prob = CareProblem([[A]], [[1.0]], [[1.0]], [[0.0]])
    assert solve_care(prob)[0, 0] == pytest.approx(P, abs=1e-12)


def test_care_zero_cost():
    A = np.array([[-1.0, 2.0], [0.0, -3.0]])
    prob = CareProblem(A, np.ones((2, 1)), np.zeros((1, 2)), np.zeros((1, 1)))
    np.testing.assert_allclose(solve_care(prob), 0.0, atol=1e-14)


def test_care_shape_validation():
    with pytest.raises(ValueError):
        CareProblem(np.eye(2), np.ones((3, 1)), np.ones((1, 2)), np.zeros((1, 1)))
    with pytest.raises(ValueError):
        CareProblem(np.eye(2), np.ones((2, 1)), np.ones((1, 2)), np.zeros((2, 1)))


def test_care_unstabilizable():
    # unstable mode that B cannot reach
    prob = CareProblem(np.diag([1.0, -1.0]), [[0.0], [1.0]], np.eye(2), np.zeros((2, 1)))
    with pytest.raises(NumericalError):
        solve_care(prob)


def test_stabilizing_gain_unstable_plant():
    A = np.array([[0.0, 1.0], [3.0, 1.0]])
    B = np.array([[0.0], [1.0]])
    assert is_hurwitz(A + B @ stabilizing_gain(A, B))


@settings(max_examples=30, deadline=None)
@given(
    st.integers(1, 6), st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**31 - 1), st.booleans()
)
def test_care_properties(n, p, m, seed, dual):
    rng = np.random.default_rng(seed)
    # generic random data is stabilizable and detectable with probability one
    prob = CareProblem(
        rng.normal(size=(n, n)), rng.normal(size=(n, p)), rng.normal(size=(m, n)), rng.normal(size=(m, p))
    )
    if dual:
        prob = prob.dual()
    P = solve_care(prob)
    F = prob.gain(P)
    assert spectral_abscissa(prob.A + prob.B @ F) < 0
    assert np.linalg.norm(P - P.T) <= 1e-12 * np.linalg.norm(P)
    assert prob.relative_residual(P) <= 1e-8
    assert np.min(np.linalg.eigvalsh(P)) >= -1e-9 * max(1.0, np.linalg.norm(P))
