import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajdiff.diffusion import (forward_sample, posterior_mean, reconstruct_y0, reparam_mean,
                                reverse_step, simple_loss)
from trajdiff.schedule import build_schedule, posterior_coefficients

S = build_schedule(100, 1e-4, 0.05)
SHAPE = (12, 2)


def _scalar_tables(k):
    """Independent scalar evaluation of the schedule quantities at step k."""
    betas = [1e-4 + (i - 1) / 99 * (0.05 - 1e-4) for i in range(1, 101)]
    abar = math.prod(1 - b for b in betas[:k])
    abar_prev = math.prod(1 - b for b in betas[:k - 1])
    return betas[k - 1], 1 - betas[k - 1], abar, abar_prev


def test_forward_zero_noise():
    y0 = np.random.default_rng(0).normal(size=SHAPE)
    out = forward_sample(S, y0, 30, np.zeros(SHAPE))
    assert np.array_equal(out, np.sqrt(S.alpha_bar[29]) * y0)


def test_forward_zero_signal():
    e = np.random.default_rng(1).normal(size=SHAPE)
    out = forward_sample(S, np.zeros(SHAPE), 30, e)
    assert np.array_equal(out, np.sqrt(S.one_minus_alpha_bar[29]) * e)


def test_forward_errors():
    with pytest.raises(ValueError):
        forward_sample(S, np.zeros(SHAPE), 1, np.zeros((11, 2)))
    with pytest.raises(ValueError):
        forward_sample(S, np.zeros(SHAPE), 0, np.zeros(SHAPE))
    with pytest.raises(ValueError):
        forward_sample(S, np.zeros(SHAPE), 101, np.zeros(SHAPE))


@pytest.mark.parametrize("k", [1, 50, 100])
def test_forward_moments_monte_carlo(k):
    rng = np.random.default_rng(k)
    y0 = np.array([[1.5, -0.7], [0.3, 2.0]])
    n = 100_000
    eps = rng.standard_normal((n,) + y0.shape)
    draws = forward_sample(S, np.broadcast_to(y0, eps.shape), np.full(n, k), eps)
    mean_ref = math.sqrt(_scalar_tables(k)[2]) * y0
    var_ref = 1 - _scalar_tables(k)[2]
    np.testing.assert_allclose(draws.mean(axis=0), mean_ref, rtol=0.01)
    np.testing.assert_allclose(draws.var(axis=0), var_ref, rtol=0.02)


def test_reconstruct_round_trip():
    rng = np.random.default_rng(2)
    for k in (1, 7, 50, 100):
        y0, e = rng.normal(size=SHAPE), rng.normal(size=SHAPE)
        back = reconstruct_y0(S, forward_sample(S, y0, k, e), k, e)
        assert np.max(np.abs(back - y0)) < 1e-12


def test_reconstruct_zero_noise():
    yk = np.random.default_rng(3).normal(size=SHAPE)
    np.testing.assert_allclose(reconstruct_y0(S, yk, 40, np.zeros(SHAPE)),
                               yk / np.sqrt(S.alpha_bar[39]), rtol=1e-15)


def test_reconstruct_against_scalar_algebra():
    rng = np.random.default_rng(4)
    yk, e = rng.normal(size=SHAPE), rng.normal(size=SHAPE)
    _, _, abar, _ = _scalar_tables(63)
    ref = [[(yk[i, j] - math.sqrt(1 - abar) * e[i, j]) / math.sqrt(abar) for j in range(2)]
           for i in range(12)]
    np.testing.assert_allclose(reconstruct_y0(S, yk, 63, e), ref, rtol=1e-12)


def test_posterior_mean_first_step_returns_y0():
    rng = np.random.default_rng(5)
    y0, y1 = rng.normal(size=SHAPE), rng.normal(size=SHAPE)
    assert np.array_equal(posterior_mean(S, y0, y1, 1), y0)


@pytest.mark.parametrize("k", [1, 2, 10, 50, 99, 100])
def test_posterior_mean_of_equal_points(k):
    p = np.random.default_rng(k).normal(size=SHAPE)
    c0, ck, _ = posterior_coefficients(S, k)
    np.testing.assert_allclose(posterior_mean(S, p, p, k), (c0 + ck) * p, rtol=1e-14)
    # The two weights do not sum to one in general, so check their sum directly.
    beta, alpha, abar, abar_prev = _scalar_tables(k)
    assert c0 + ck == pytest.approx(
        (math.sqrt(abar_prev) * beta + math.sqrt(alpha) * (1 - abar_prev)) / (1 - abar), rel=1e-12)


def test_posterior_mean_random_against_scalar_formula():
    rng = np.random.default_rng(6)
    y0, yk = rng.normal(size=SHAPE), rng.normal(size=SHAPE)
    beta, alpha, abar, abar_prev = _scalar_tables(37)
    ref = (math.sqrt(abar_prev) * beta / (1 - abar)) * y0 \
        + (math.sqrt(alpha) * (1 - abar_prev) / (1 - abar)) * yk
    np.testing.assert_allclose(posterior_mean(S, y0, yk, 37), ref, rtol=1e-12)


def test_reparam_mean_zero_noise():
    yk = np.random.default_rng(7).normal(size=SHAPE)
    np.testing.assert_allclose(reparam_mean(S, yk, 20, np.zeros(SHAPE)),
                               yk / np.sqrt(S.alpha[19]), rtol=1e-15)


def test_reparam_mean_against_scalar_formula():
    rng = np.random.default_rng(8)
    yk, e = rng.normal(size=SHAPE), rng.normal(size=SHAPE)
    beta, alpha, abar, _ = _scalar_tables(81)
    ref = (yk - beta / math.sqrt(1 - abar) * e) / math.sqrt(alpha)
    np.testing.assert_allclose(reparam_mean(S, yk, 81, e), ref, rtol=1e-12)


def test_reparameterization_identity_batch():
    rng = np.random.default_rng(9)
    n = 1000
    y0 = rng.normal(size=(n,) + SHAPE) * 3
    e = rng.standard_normal((n,) + SHAPE)
    k = rng.integers(1, 101, size=n)
    yk = forward_sample(S, y0, k, e)
    gap = np.abs(reparam_mean(S, yk, k, e) - posterior_mean(S, y0, yk, k))
    assert gap.max() < 1e-10


@settings(max_examples=200, deadline=None)
@given(k=st.integers(1, 100), seed=st.integers(0, 2**32 - 1),
       scale=st.floats(0.01, 10.0))
def test_reparameterization_identity_property(k, seed, scale):
    rng = np.random.default_rng(seed)
    y0, e = scale * rng.normal(size=SHAPE), rng.standard_normal(SHAPE)
    yk = forward_sample(S, y0, k, e)
    assert np.max(np.abs(reparam_mean(S, yk, k, e) - posterior_mean(S, y0, yk, k))) < 1e-10


def test_reverse_step_final_is_mean():
    rng = np.random.default_rng(10)
    yk, e = rng.normal(size=SHAPE), rng.normal(size=SHAPE)
    out = reverse_step(S, yk, 1, e, np.zeros(SHAPE))
    assert np.array_equal(out, reparam_mean(S, yk, 1, e))


def test_reverse_step_rejects_noise_at_final_step():
    with pytest.raises(ValueError):
        reverse_step(S, np.zeros(SHAPE), 1, np.zeros(SHAPE), np.ones(SHAPE))


def test_reverse_step_deterministic_without_noise():
    rng = np.random.default_rng(11)
    yk, e = rng.normal(size=SHAPE), rng.normal(size=SHAPE)
    a = reverse_step(S, yk, 42, e, np.zeros(SHAPE))
    b = reverse_step(S, yk, 42, e, np.zeros(SHAPE))
    assert np.array_equal(a, b)
    assert np.array_equal(a, reparam_mean(S, yk, 42, e))


@pytest.mark.parametrize("k", [2, 50, 100])
def test_reverse_step_variance_is_beta(k):
    rng = np.random.default_rng(12)
    n = 100_000
    yk, e = rng.normal(size=SHAPE), rng.normal(size=SHAPE)
    z = rng.standard_normal((n,) + SHAPE)
    out = reverse_step(S, np.broadcast_to(yk, z.shape), np.full(n, k),
                       np.broadcast_to(e, z.shape), z)
    np.testing.assert_allclose(out.var(axis=0).mean(), S.beta[k - 1], rtol=0.02)


@pytest.mark.parametrize("k", [2, 30, 100])
def test_reverse_step_with_true_noise_matches_posterior(k):
    # Reverse steps driven by the true eps, with posterior-variance noise, reproduce
    # the moments of q(y_{k-1} | y_k, y_0).
    rng = np.random.default_rng(13)
    n = 100_000
    y0 = rng.normal(size=SHAPE) * 2 + 1
    e = rng.standard_normal(SHAPE)
    yk = forward_sample(S, y0, k, e)
    mean = reparam_mean(S, yk, k, e)
    draws = mean + np.sqrt(S.beta_tilde[k - 1]) * rng.standard_normal((n,) + SHAPE)
    target = posterior_mean(S, y0, yk, k)
    np.testing.assert_allclose(draws.mean(axis=0), target, rtol=0.01,
                               atol=0.01 * np.abs(target).mean())
    np.testing.assert_allclose(draws.var(axis=0).mean(), S.beta_tilde[k - 1], rtol=0.02)


def test_simple_loss_values():
    e = np.random.default_rng(14).normal(size=SHAPE)
    assert simple_loss(e, e) == 0.0
    assert simple_loss(np.zeros(SHAPE), np.ones(SHAPE)) == 1.0
    with pytest.raises(ValueError):
        simple_loss(np.zeros(SHAPE), np.zeros((3, 2)))


def test_simple_loss_against_scalar_loop():
    rng = np.random.default_rng(15)
    a, b = rng.normal(size=SHAPE), rng.normal(size=SHAPE)
    total = 0.0
    for i in range(12):
        for j in range(2):
            total += (a[i, j] - b[i, j]) ** 2
    assert simple_loss(a, b) == pytest.approx(total / 24, rel=1e-14)


def test_kernels_are_pure():
    rng = np.random.default_rng(16)
    y0, e = rng.normal(size=SHAPE), rng.normal(size=SHAPE)
    y0c, ec = y0.copy(), e.copy()
    a = forward_sample(S, y0, 10, e)
    b = forward_sample(S, y0, 10, e)
    assert a.tobytes() == b.tobytes()
    assert np.array_equal(y0, y0c) and np.array_equal(e, ec)
