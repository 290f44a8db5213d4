import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from kalnat.errors import InvalidArgumentError, SingularMatrixError
from kalnat.robust import (
    LambdaScope,
    NoiseState,
    RhatMethod,
    RobustConfig,
    ema_update,
    floor_spd,
    mahalanobis,
    projected_cov,
    regulation,
    residual,
    rhat_method1,
    rhat_method2,
)

from conftest import random_spd


@pytest.mark.parametrize("y, yhat, expected", [
    ([1, 1], [1, 1], [0, 0]),
    ([1], [0.2], [0.8]),
    ([1, 1, 1], [0.9, 0.5, -0.1], [0.1, 0.5, 1.1]),
])
def test_residual_examples(y, yhat, expected):
    assert_allclose(residual(y, yhat), expected, rtol=1e-15, atol=1e-15)


def test_residual_length_mismatch():
    with pytest.raises(InvalidArgumentError):
        residual([1, 1], [1])


@pytest.mark.parametrize("r, expected", [
    ([0, 0], np.zeros((2, 2))),
    ([1], [[1]]),
    ([1, 2], [[1, 2], [2, 4]]),
])
def test_rhat_method1_examples(r, expected):
    assert_array_equal(rhat_method1(r), expected)


def test_rhat_method2_examples():
    assert_allclose(rhat_method2([0.0], [[1.0, 0.0]], np.eye(2)), [[1.0]])
    assert_allclose(rhat_method2([1.0], np.zeros((1, 2)), np.eye(2)), [[1.0]])
    assert_allclose(rhat_method2([1.0], [[1.0, 1.0]], np.eye(2)), [[3.0]])


def test_rhat_method2_diagonal_covariance():
    assert_allclose(rhat_method2([1.0], [[1.0, 1.0]], np.array([1.0, 2.0])), [[4.0]])


def test_rhat_method2_reuses_projected_cov():
    # a supplied H Sigma H^T is used as given
    out = rhat_method2([1.0], None, None, HSH=np.array([[5.0]]))
    assert_allclose(out, [[6.0]])


def test_rhat_method2_dimension_mismatch():
    with pytest.raises(InvalidArgumentError):
        rhat_method2([1.0, 2.0], [[1.0, 0.0]], np.eye(2))
    with pytest.raises(InvalidArgumentError):
        projected_cov([[1.0, 0.0]], np.eye(3))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_method2_minus_method1_is_projected_cov(m, n, seed):
    rng = np.random.default_rng(seed)
    r = rng.standard_normal(m)
    H = rng.standard_normal((m, n))
    S = random_spd(rng, n, 100.0)
    diff = rhat_method2(r, H, S) - rhat_method1(r)
    assert_allclose(diff, H @ S @ H.T, rtol=1e-12, atol=1e-12)
    assert np.min(np.linalg.eigvalsh(diff)) >= -1e-10 * max(1.0, np.max(np.abs(diff)))


@pytest.mark.parametrize("r, R, expected", [
    ([0.0, 0.0], np.eye(2), 0.0),
    ([3.0], [[9.0]], 1.0),
    ([1.0, 1.0], np.eye(2), np.sqrt(2.0)),
])
def test_mahalanobis_examples(r, R, expected):
    assert_allclose(mahalanobis(r, R), expected, rtol=1e-14)


def test_mahalanobis_singular():
    with pytest.raises(SingularMatrixError):
        mahalanobis([1.0, 1.0], np.zeros((2, 2)))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.floats(1e-3, 1e3), st.integers(0, 2**32 - 1))
def test_mahalanobis_scale_consistency(m, c, seed):
    rng = np.random.default_rng(seed)
    r = rng.standard_normal(m)
    R = random_spd(rng, m, 100.0)
    assert_allclose(mahalanobis(c * r, c * c * R), mahalanobis(r, R), rtol=1e-10)


@pytest.mark.parametrize("d, a, expected", [
    (0.0, 0.1, 1.0),
    (10.0, 0.1, np.exp(-1.0)),
    (123.0, 0.0, 1.0),
])
def test_regulation_examples(d, a, expected):
    assert_allclose(regulation(d, a), expected, rtol=1e-15)


def test_regulation_rejects_negative():
    with pytest.raises(InvalidArgumentError):
        regulation(-1.0, 0.1)
    with pytest.raises(InvalidArgumentError):
        regulation(1.0, -0.1)


def test_regulation_never_zero():
    assert regulation(1e6, 10.0) > 0.0


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 50), st.floats(0, 2), st.floats(0, 2))
def test_regulation_additive_in_alpha(d, a1, a2):
    lhs = regulation(d, a1 + a2)
    rhs = regulation(d, a1) * regulation(d, a2)
    assert lhs == pytest.approx(rhs, rel=1e-13)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 20), st.floats(0.01, 2), st.floats(1e-3, 1.0))
def test_regulation_strictly_decreasing(d, a, delta):
    assert regulation(d + delta, a) < regulation(d, a)
    assert regulation(d, a + delta) < regulation(d, a)


def test_ema_scalar_example():
    state = NoiseState(np.array([[1.0]]), beta=0.98, epsilon=1e-3)
    assert_allclose(ema_update(state, np.array([[2.0]]), 1.0).R, [[1.02]], rtol=1e-15)


def test_ema_small_lambda_barely_moves():
    state = NoiseState(np.array([[1.0]]), beta=0.98, epsilon=1e-3)
    out = ema_update(state, np.array([[1.0]]), 1e-12)
    assert_allclose(out.R, [[0.98]], rtol=1e-9)


def test_ema_keeps_parameters():
    state = NoiseState.initial(3, beta=0.9, epsilon=0.01, method="ZerothOrder")
    out = ema_update(state, np.eye(3), 0.5)
    assert (out.beta, out.epsilon, out.method) == (0.9, 0.01, RhatMethod.ZEROTH_ORDER)


@pytest.mark.parametrize("lam", [0.0, -0.1, 1.5])
def test_ema_lambda_out_of_range(lam):
    with pytest.raises(InvalidArgumentError):
        ema_update(NoiseState.initial(1), np.eye(1), lam)


def test_ema_floor_applied():
    state = NoiseState(np.array([[0.01]]), beta=0.5, epsilon=0.1)
    assert_allclose(ema_update(state, np.zeros((1, 1)), 1.0).R, [[0.1]])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.floats(0.5, 0.999), st.floats(1e-4, 1.0), st.integers(0, 2**32 - 1))
def test_ema_invariants_over_sequences(m, beta, eps, seed):
    rng = np.random.default_rng(seed)
    state = NoiseState.initial(m, beta, eps)
    for _ in range(20):
        r = rng.standard_normal(m) * rng.uniform(0, 3)
        lam = float(rng.uniform(1e-6, 1.0))
        state = ema_update(state, rhat_method1(r), lam)
        R = state.R
        assert np.max(np.abs(R - R.T)) <= 1e-10 * max(1.0, np.max(np.abs(R)))
        assert np.min(np.linalg.eigvalsh(R)) >= eps * (1 - 1e-10)


def test_initial_noise_state():
    state = NoiseState.initial(4, epsilon=0.2)
    assert_array_equal(state.R, 0.2 * np.eye(4))
    assert state.m == 4
    assert state.method is RhatMethod.FIRST_ORDER


@pytest.mark.parametrize("kwargs", [dict(beta=0.0), dict(beta=1.0), dict(epsilon=0.0)])
def test_noise_state_validation(kwargs):
    with pytest.raises(InvalidArgumentError):
        NoiseState(np.eye(2), **kwargs)


def test_noise_state_read_only():
    state = NoiseState.initial(2)
    with pytest.raises(ValueError):
        state.R[0, 0] = 5.0


def test_robust_config():
    assert RobustConfig().lambda_scope is LambdaScope.ALG1
    assert RobustConfig(0.0, "textivd").lambda_scope is LambdaScope.TEXT_IVD
    with pytest.raises(InvalidArgumentError):
        RobustConfig(-0.1)
    with pytest.raises(InvalidArgumentError):
        RobustConfig(0.1, "sometimes")


def test_floor_spd_untouched_above_floor():
    R = np.array([[2.0, 0.5], [0.5, 1.0]])
    assert floor_spd(R, 0.1) is R


def test_floor_spd_clamps_eigenvalues():
    R = np.array([[1.0, 1.0], [1.0, 1.0]])
    out = floor_spd(R, 0.3)
    assert_allclose(np.linalg.eigvalsh(out), [0.3, 2.0], atol=1e-14)
