"""Linear beta noise schedule and the forward corruption process."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step noise levels for T diffusion steps.

    ``beta[i]`` and ``alpha_bar[i]`` belong to step t = i + 1; step 0 is the
    clean image by convention, alpha_bar(0) = 1.
    """

    beta: np.ndarray
    alpha_bar: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        alpha_bar = np.asarray(self.alpha_bar, dtype=np.float64)
        if beta.ndim != 1 or beta.shape != alpha_bar.shape or beta.size < 1:
            raise ValueError("beta and alpha_bar must be equal-length 1D arrays")
        if not (np.all(beta > 0.0) and np.all(beta < 1.0)):
            raise ValueError("all betas must lie in (0, 1)")
        if alpha_bar.size > 1 and not np.all(np.diff(alpha_bar) < 0.0):
            raise ValueError("alpha_bar must be strictly decreasing")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha_bar", alpha_bar)

    @property
    def T(self) -> int:
        return int(self.beta.size)

    def alpha_bar_at(self, t: int) -> float:
        """Cumulative signal fraction at step t, with alpha_bar(0) = 1."""
        if not 0 <= t <= self.T:
            raise ValueError(f"step {t} outside [0, {self.T}]")
        if t == 0:
            return 1.0
        return float(self.alpha_bar[t - 1])


def linear_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Betas linearly interpolated from beta_start to beta_end over T steps.

    The default endpoints are the common DDPM choice for T = 1000; shorter
    schedules should scale beta_end up so alpha_bar(T) still lands near zero
    (e.g. 0.1 for T = 200), otherwise sampling from pure noise mismatches
    the forward process.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    if T == 1:
        beta = np.array([beta_start], dtype=np.float64)
    else:
        beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha_bar = np.cumprod(1.0 - beta)
    return NoiseSchedule(beta=beta, alpha_bar=alpha_bar)


def forward_noise(x0: np.ndarray, t: int, noise: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Corrupt x0 to step t: x_t = sqrt(ab_t) * x0 + sqrt(1 - ab_t) * noise."""
    x0 = np.asarray(x0)
    noise = np.asarray(noise)
    if x0.shape != noise.shape:
        raise ValueError(f"shape mismatch: {x0.shape} vs {noise.shape}")
    if not 1 <= t <= sched.T:
        raise ValueError(f"step {t} outside [1, {sched.T}]")
    ab = sched.alpha_bar_at(t)
    # plain-float scalars keep float32 inputs in float32
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * noise
