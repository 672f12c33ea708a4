"""Linear variance schedule for the K-step diffusion chain."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_K = 100
DEFAULT_BETA_MIN = 1e-4
DEFAULT_BETA_MAX = 0.05


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Precomputed per-step tables, indexed 1..K through the accessor methods.

    The arrays are stored zero-based: ``beta[k - 1]`` is the variance of step k.
    """

    K: int
    beta_min: float
    beta_max: float
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    one_minus_alpha_bar: np.ndarray
    beta_tilde: np.ndarray

    def check_step(self, k) -> None:
        k_arr = np.asarray(k)
        if not np.issubdtype(k_arr.dtype, np.integer):
            raise TypeError(f"step index must be an integer, got {k_arr.dtype}")
        if np.any(k_arr < 1) or np.any(k_arr > self.K):
            raise ValueError(f"step index out of range 1..{self.K}: {k}")

    def alpha_bar_prev(self, k):
        """alpha_bar at step k-1, with alpha_bar_0 = 1."""
        self.check_step(k)
        k = np.asarray(k)
        return np.where(k > 1, self.alpha_bar[np.maximum(k - 2, 0)], 1.0)

    def keys(self) -> dict:
        return {"K": self.K, "beta_min": self.beta_min, "beta_max": self.beta_max}


def build_schedule(K: int = DEFAULT_K, beta_min: float = DEFAULT_BETA_MIN,
                   beta_max: float = DEFAULT_BETA_MAX) -> NoiseSchedule:
    """Linear ramp ``beta_min -> beta_max`` over K steps with derived tables."""
    if isinstance(K, bool) or int(K) != K or K < 1:
        raise ValueError(f"K must be a positive integer, got {K!r}")
    K = int(K)
    beta_min = float(beta_min)
    beta_max = float(beta_max)
    if not (0.0 < beta_min < 1.0 and 0.0 < beta_max < 1.0):
        raise ValueError(f"beta bounds must lie in (0, 1), got ({beta_min}, {beta_max})")
    if beta_min > beta_max:
        raise ValueError(f"beta_min {beta_min} exceeds beta_max {beta_max}")

    if K == 1:
        beta = np.array([beta_min])
    else:
        steps = np.arange(K, dtype=np.float64)
        beta = beta_min + steps / (K - 1) * (beta_max - beta_min)
    return schedule_from_betas(beta, beta_min, beta_max)


def schedule_from_betas(beta, beta_min: float | None = None,
                        beta_max: float | None = None) -> NoiseSchedule:
    """Derived tables for an arbitrary variance sequence in (0, 1)."""
    beta = np.array(beta, dtype=np.float64).reshape(-1)
    if beta.size == 0 or np.any(beta <= 0) or np.any(beta >= 1):
        raise ValueError("variances must be a non-empty sequence in (0, 1)")
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    alpha_bar_prev = np.concatenate([[1.0], alpha_bar[:-1]])
    # 1 - abar_k = (1 - abar_{k-1}) + abar_{k-1} * beta_k; exact at k = 1.
    one_minus = np.cumsum(alpha_bar_prev * beta)
    one_minus_prev = np.concatenate([[0.0], one_minus[:-1]])
    beta_tilde = one_minus_prev / one_minus * beta
    for arr in (beta, alpha, alpha_bar, one_minus, beta_tilde):
        arr.setflags(write=False)
    lo = float(beta.min()) if beta_min is None else beta_min
    hi = float(beta.max()) if beta_max is None else beta_max
    return NoiseSchedule(len(beta), lo, hi, beta, alpha, alpha_bar, one_minus, beta_tilde)


def posterior_coefficients(s: NoiseSchedule, k):
    """Coefficients of the Gaussian posterior q(y_{k-1} | y_k, y_0).

    Returns ``(coef_y0, coef_yk, var)`` so that the posterior mean is
    ``coef_y0 * y0 + coef_yk * yk``. Vectorizes over an array of steps.
    """
    s.check_step(k)
    idx = np.asarray(k) - 1
    beta = s.beta[idx]
    alpha = s.alpha[idx]
    om = s.one_minus_alpha_bar[idx]
    om_prev = np.where(idx > 0, s.one_minus_alpha_bar[np.maximum(idx - 1, 0)], 0.0)
    coef_y0 = np.sqrt(s.alpha_bar_prev(k)) * beta / om
    coef_yk = np.sqrt(alpha) * om_prev / om
    var = s.beta_tilde[idx]
    if np.ndim(k) == 0:
        return float(coef_y0), float(coef_yk), float(var)
    return coef_y0, coef_yk, var
