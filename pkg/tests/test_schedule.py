import mpmath
import numpy as np
import pytest

from trajdiff.schedule import build_schedule, posterior_coefficients, schedule_from_betas

# Frozen from a 50-digit mpmath evaluation of the linear ramp and its products.
ALPHA_BAR_100 = 0.07823431562186835056509494
K2_TRIPLE = (0.8579934107007496807673011, 0.142006581746086367997453,
             0.00008580363135890281547828637)


def _mp_schedule(K, lo, hi):
    mpmath.mp.dps = 50
    lo, hi = mpmath.mpf(lo), mpmath.mpf(hi)
    betas = [lo + (k - 1) * (hi - lo) / (K - 1) for k in range(1, K + 1)]
    abar, out = mpmath.mpf(1), []
    for b in betas:
        abar *= 1 - b
        out.append(abar)
    return betas, out


def test_endpoints():
    s = build_schedule(100, 0.0001, 0.05)
    assert s.beta[0] == 0.0001
    assert s.beta[-1] == pytest.approx(0.05, abs=1e-17)


def test_midpoint_symmetry():
    s = build_schedule(100, 0.0001, 0.05)
    assert (s.beta[49] + s.beta[50]) / 2 == pytest.approx(0.02505, abs=1e-15)


def test_alpha_bar_matches_extended_precision():
    s = build_schedule(100, 0.0001, 0.05)
    assert abs(s.alpha_bar[-1] - ALPHA_BAR_100) < 1e-12
    assert s.alpha_bar[-1] == pytest.approx(0.078, abs=1e-3)
    _, ref = _mp_schedule(100, "0.0001", "0.05")
    assert np.max(np.abs(s.alpha_bar - np.array([float(v) for v in ref]))) < 1e-13


def test_single_step_schedule():
    s = build_schedule(1, 0.01, 0.02)
    assert s.beta.tolist() == [0.01]
    assert s.alpha_bar[0] == s.alpha[0]


@pytest.mark.parametrize("args", [(0, 1e-4, 0.05), (10, 0.0, 0.05), (10, 1e-4, 1.0),
                                  (10, 0.1, 0.05), (-3, 1e-4, 0.05), (2.5, 1e-4, 0.05)])
def test_rejects_bad_arguments(args):
    with pytest.raises(ValueError):
        build_schedule(*args)


def test_invariants():
    s = build_schedule(100, 0.0001, 0.05)
    assert np.all((s.beta > 0) & (s.beta < 1))
    assert np.all(np.diff(s.beta) >= 0)
    assert np.all(np.diff(s.alpha_bar) < 0)
    assert s.alpha_bar[0] == s.alpha[0]
    assert 0 < s.alpha_bar[-1] < 1
    assert s.beta_tilde[0] == 0.0
    assert np.all(s.beta_tilde <= s.beta)
    assert np.all(s.beta_tilde >= 0)
    np.testing.assert_allclose(s.one_minus_alpha_bar, 1 - s.alpha_bar, atol=1e-15)


def test_tables_are_read_only():
    s = build_schedule(10)
    with pytest.raises(ValueError):
        s.beta[0] = 0.5


def test_deterministic():
    a, b = build_schedule(100, 1e-4, 0.05), build_schedule(100, 1e-4, 0.05)
    for name in ("beta", "alpha", "alpha_bar", "beta_tilde"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()


def test_posterior_coefficients_first_step_is_exact():
    s = build_schedule(100, 0.0001, 0.05)
    assert posterior_coefficients(s, 1) == (1.0, 0.0, 0.0)


def test_posterior_coefficients_k2_against_oracle():
    s = build_schedule(100, 0.0001, 0.05)
    got = posterior_coefficients(s, 2)
    np.testing.assert_allclose(got, K2_TRIPLE, rtol=1e-12)


def test_posterior_coefficients_all_steps_against_mpmath():
    betas, abar = _mp_schedule(100, "0.0001", "0.05")
    s = build_schedule(100, 0.0001, 0.05)
    c0, ck, var = posterior_coefficients(s, np.arange(1, 101))
    for k in range(2, 101):
        b, ab, abp = betas[k - 1], abar[k - 1], abar[k - 2]
        assert c0[k - 1] == pytest.approx(float(mpmath.sqrt(abp) * b / (1 - ab)), rel=1e-12)
        assert ck[k - 1] == pytest.approx(float(mpmath.sqrt(1 - b) * (1 - abp) / (1 - ab)), rel=1e-12)
        assert var[k - 1] == pytest.approx(float((1 - abp) / (1 - ab) * b), rel=1e-12)


@pytest.mark.parametrize("tiny", [1e-6, 1e-9, 1e-12])
def test_vanishing_beta_step_is_identity(tiny):
    s = schedule_from_betas([0.3, 0.2, tiny])
    c0, ck, var = posterior_coefficients(s, 3)
    assert c0 == pytest.approx(0.0, abs=10 * tiny)
    assert ck == pytest.approx(1.0, abs=10 * tiny)
    assert var <= tiny


@pytest.mark.parametrize("k", [0, 101, -1])
def test_posterior_coefficients_range(k):
    with pytest.raises(ValueError):
        posterior_coefficients(build_schedule(100), k)
