"""Deterministic DDIM sampling along a shortened timestep subsequence."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..contrast import NormalizationRecord, denormalize
from ..errors import NumericalError
from .condition import Condition
from .denoiser import DenoiserParams, denoise_predict
from .schedule import NoiseSchedule


@dataclass(frozen=True)
class SamplerConfig:
    """Strictly increasing inference timesteps; the last one must equal the
    schedule's T at sampling time. Fully deterministic (no stochastic term)."""

    taus: tuple[int, ...]

    def __post_init__(self):
        if len(self.taus) < 1:
            raise ValueError("need at least one inference step")
        if self.taus[0] < 1:
            raise ValueError("timesteps start at 1")
        if any(b <= a for a, b in zip(self.taus, self.taus[1:])):
            raise ValueError("timesteps must be strictly increasing")

    @property
    def S(self) -> int:
        return len(self.taus)


def uniform_sampler_config(T: int, S: int) -> SamplerConfig:
    """S uniformly spaced steps out of T, always including T itself."""
    if not 1 <= S <= T:
        raise ValueError(f"need 1 <= S <= T, got S={S}, T={T}")
    taus = tuple(math.ceil(T * k / S) for k in range(1, S + 1))
    return SamplerConfig(taus=taus)


def ddim_step(
    x_t: np.ndarray, t: int, t_prev: int, eps_hat: np.ndarray, sched: NoiseSchedule
) -> np.ndarray:
    """One deterministic reverse step from t down to t_prev.

    Reconstructs x0_hat from the noise prediction, then re-noises it to the
    earlier step's level with the same prediction; t_prev = 0 (alpha_bar 1)
    lands on the clean estimate.
    """
    if not (t > t_prev >= 0):
        raise ValueError(f"need t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    ab_t = sched.alpha_bar_at(t)
    ab_prev = sched.alpha_bar_at(t_prev)
    x0_hat = (x_t - math.sqrt(1.0 - ab_t) * eps_hat) / math.sqrt(ab_t)
    return math.sqrt(ab_prev) * x0_hat + math.sqrt(1.0 - ab_prev) * eps_hat


def ddim_sample(
    predict: Callable[[np.ndarray, int], np.ndarray],
    shape: tuple[int, int],
    sched: NoiseSchedule,
    sampler: SamplerConfig,
    rng: np.random.Generator,
    dtype=np.float64,
) -> np.ndarray:
    """Run the full reverse trajectory from pure noise.

    ``predict(x, t)`` must return the noise estimate for latent x at step t.
    Intermediate values are never clipped; a non-finite intermediate aborts
    with the offending step index.
    """
    if sampler.taus[-1] != sched.T:
        raise ValueError(f"last inference step {sampler.taus[-1]} must equal T={sched.T}")
    x = rng.standard_normal(shape).astype(dtype)
    for k in range(sampler.S - 1, -1, -1):
        t = sampler.taus[k]
        t_prev = sampler.taus[k - 1] if k > 0 else 0
        eps_hat = predict(x, t)
        x = ddim_step(x, t, t_prev, eps_hat, sched)
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"non-finite latent after inference step {k} (t={t})")
    return x


def sample(
    params: DenoiserParams,
    cond: Condition,
    sched: NoiseSchedule,
    sampler: SamplerConfig,
    seed: int,
) -> np.ndarray:
    """Reconstruct a normalized flow map under static conditional guidance.

    The initial latent is standard normal from the given seed; the output
    stays in the normalized [-1, 1]-ish domain (unclipped) and is
    denormalized by the caller against the appropriate record.
    """
    channels = cond.channels
    h, w = channels.shape[1:]
    rng = np.random.default_rng(seed)

    def predict(x: np.ndarray, t: int) -> np.ndarray:
        return denoise_predict(params, x, t, channels)

    return ddim_sample(predict, (h, w), sched, sampler, rng, dtype=params.weights.dtype)


def sample_flow(
    params: DenoiserParams,
    cond: Condition,
    sched: NoiseSchedule,
    sampler: SamplerConfig,
    seed: int,
    record: NormalizationRecord,
) -> tuple[np.ndarray, np.ndarray]:
    """Sample and denormalize: returns (normalized estimate, flow map)."""
    normalized = sample(params, cond, sched, sampler, seed)
    return normalized, denormalize(normalized, record)
