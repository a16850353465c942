"""Linear variance schedule, closed-form forward noising and the x0-parameterised reverse chain.

Steps are 1-based throughout: arrays are stored 0-based, so step k lives at index k-1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, NonFiniteError


@dataclass(frozen=True)
class NoiseSchedule:
    K: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    posterior_beta: np.ndarray

    def alpha_bar_prev(self, k: int) -> float:
        return 1.0 if k == 1 else float(self.alpha_bar[k - 2])

    def check_step(self, k: int) -> None:
        if not 1 <= k <= self.K:
            raise ValueError(f"diffusion step {k} outside [1, {self.K}]")


def build_schedule(K: int, beta_min: float = 1e-4, beta_max: float = 0.02) -> NoiseSchedule:
    if K < 1:
        raise ConfigError("schedule needs K >= 1")
    if not 0.0 < beta_min <= beta_max < 1.0:
        raise ConfigError(f"bad beta range [{beta_min}, {beta_max}]")
    beta = np.linspace(beta_min, beta_max, K) if K > 1 else np.array([beta_min])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    prev = np.concatenate([[1.0], alpha_bar[:-1]])
    post = (1.0 - prev) * beta / (1.0 - alpha_bar)
    for arr in (beta, alpha, alpha_bar, post):
        arr.setflags(write=False)
    return NoiseSchedule(K, beta, alpha, alpha_bar, post)


def scaled_beta_range(K: int, beta_min: float = 1e-4, beta_max: float = 0.02, reference_K: int = 1000):
    """Rescale a beta range tuned for ``reference_K`` steps to ``K`` steps so the total injected
    noise (and hence abar_K) stays comparable."""
    f = reference_K / K
    hi = min(beta_max * f, 0.999)
    return min(beta_min * f, hi), hi


def forward_noise(x0, k: int, epsilon, schedule: NoiseSchedule):
    """x_k = sqrt(abar_k) x0 + sqrt(1 - abar_k) eps."""
    schedule.check_step(k)
    ab = schedule.alpha_bar[k - 1]
    return np.sqrt(ab) * np.asarray(x0) + np.sqrt(1.0 - ab) * np.asarray(epsilon)


def forward_noise_batch(x0, ks, epsilon, schedule: NoiseSchedule):
    """Vectorised forward_noise with one step per leading-axis item."""
    ks = np.asarray(ks)
    if ks.min() < 1 or ks.max() > schedule.K:
        raise ValueError("diffusion step outside schedule")
    ab = schedule.alpha_bar[ks - 1].reshape((-1,) + (1,) * (np.ndim(x0) - 1))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * epsilon


def posterior_coefficients(k: int, schedule: NoiseSchedule):
    """(c0, ck) with mu = c0 x0_hat + ck x_k."""
    schedule.check_step(k)
    ab = schedule.alpha_bar[k - 1]
    ab_prev = schedule.alpha_bar_prev(k)
    b = schedule.beta[k - 1]
    c0 = np.sqrt(ab_prev) * b / (1.0 - ab)
    ck = np.sqrt(schedule.alpha[k - 1]) * (1.0 - ab_prev) / (1.0 - ab)
    return float(c0), float(ck)


def posterior_mean(x0_hat, x_k, k: int, schedule: NoiseSchedule):
    c0, ck = posterior_coefficients(k, schedule)
    return c0 * np.asarray(x0_hat) + ck * np.asarray(x_k)


def reverse_sample(model, cond, schedule: NoiseSchedule, rng, trace=None):
    """Ancestral sampling from x_K ~ N(0, I) down to x_0.

    ``model(x_k, k, cond)`` returns the x0 estimate with the shape of ``x_k``;
    ``cond`` carries the leading batch shape (B, C, H, W) and the sample is (B, 2, H, W).
    When ``trace`` is a list, each intermediate x0 estimate is appended.
    """
    cond = np.asarray(cond)
    shape = (cond.shape[0], 2) + cond.shape[2:]
    x = rng.standard_normal(shape)
    for k in range(schedule.K, 0, -1):
        x0_hat = np.asarray(model(x, k, cond))
        if trace is not None:
            trace.append(x0_hat)
        mu = posterior_mean(x0_hat, x, k, schedule)
        if k > 1:
            x = mu + np.sqrt(schedule.posterior_beta[k - 1]) * rng.standard_normal(shape)
        else:
            x = mu
        if not np.all(np.isfinite(x)):
            raise NonFiniteError(f"non-finite value in reverse chain at step {k}")
    return x


def to_complex(x):
    """(..., 2, H, W) real/imag planes -> complex (..., H, W)."""
    x = np.asarray(x)
    return x[..., 0, :, :] + 1j * x[..., 1, :, :]
