"""Model-free diffusion kernels on future paths.

Every kernel accepts a single path of shape ``(T_pred, 2)`` or a stack of
paths ``(B, T_pred, 2)``; ``k`` is then a scalar or a length-B array of steps.
All functions are pure.
"""

from __future__ import annotations

import numpy as np

from .schedule import NoiseSchedule, posterior_coefficients


def _per_path(values, ref: np.ndarray) -> np.ndarray:
    """Broadcast a per-path scalar (or array of scalars) against ``ref``."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 0:
        return values
    return values.reshape(values.shape + (1,) * (ref.ndim - values.ndim))


def _check_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def forward_sample(s: NoiseSchedule, y0, k, eps) -> np.ndarray:
    """Closed-form corruption ``sqrt(abar_k) y0 + sqrt(1 - abar_k) eps``."""
    y0 = np.asarray(y0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    _check_same_shape(y0, eps, "forward_sample")
    s.check_step(k)
    idx = np.asarray(k) - 1
    signal = _per_path(np.sqrt(s.alpha_bar[idx]), y0)
    noise = _per_path(np.sqrt(s.one_minus_alpha_bar[idx]), y0)
    return signal * y0 + noise * eps


def reconstruct_y0(s: NoiseSchedule, yk, k, eps) -> np.ndarray:
    """Invert :func:`forward_sample` given the noise that produced ``yk``."""
    yk = np.asarray(yk, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    _check_same_shape(yk, eps, "reconstruct_y0")
    s.check_step(k)
    idx = np.asarray(k) - 1
    signal = _per_path(np.sqrt(s.alpha_bar[idx]), yk)
    noise = _per_path(np.sqrt(s.one_minus_alpha_bar[idx]), yk)
    return (yk - noise * eps) / signal


def posterior_mean(s: NoiseSchedule, y0, yk, k) -> np.ndarray:
    y0 = np.asarray(y0, dtype=np.float64)
    yk = np.asarray(yk, dtype=np.float64)
    _check_same_shape(y0, yk, "posterior_mean")
    coef_y0, coef_yk, _ = posterior_coefficients(s, k)
    return _per_path(coef_y0, y0) * y0 + _per_path(coef_yk, yk) * yk


def reparam_mean(s: NoiseSchedule, yk, k, eps_hat) -> np.ndarray:
    """Reverse-transition mean expressed through a noise estimate."""
    yk = np.asarray(yk, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    _check_same_shape(yk, eps_hat, "reparam_mean")
    s.check_step(k)
    idx = np.asarray(k) - 1
    inv_sqrt_alpha = _per_path(1.0 / np.sqrt(s.alpha[idx]), yk)
    eps_coef = _per_path(s.beta[idx] / np.sqrt(s.one_minus_alpha_bar[idx]), yk)
    return inv_sqrt_alpha * (yk - eps_coef * eps_hat)


def reverse_step(s: NoiseSchedule, yk, k, eps_hat, z) -> np.ndarray:
    """One ancestral step: reverse mean plus ``sqrt(beta_k) z``.

    The final step (k = 1) is noiseless, so ``z`` must be zero there.
    """
    yk = np.asarray(yk, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    _check_same_shape(yk, z, "reverse_step")
    mean = reparam_mean(s, yk, k, eps_hat)
    k_arr = np.asarray(k)
    last = np.broadcast_to(k_arr == 1, k_arr.shape)
    if np.any(last):
        z_last = z if k_arr.ndim == 0 else z[last]
        if np.any(z_last != 0.0):
            raise ValueError("z must be zero at the final reverse step k = 1")
    idx = k_arr - 1
    return mean + _per_path(np.sqrt(s.beta[idx]), yk) * z


def simple_loss(eps, eps_hat) -> float:
    """Mean squared error between the true and predicted noise."""
    eps = np.asarray(eps, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    _check_same_shape(eps, eps_hat, "simple_loss")
    return float(np.mean((eps - eps_hat) ** 2))
