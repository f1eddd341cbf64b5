"""Noise-prediction training loop: squared-error loss, analytic gradients,
and AdamW with decoupled weight decay. Deterministic given the seed."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import NumericalError, TrainingDivergedError
from .denoiser import DenoiserParams, _backward, _forward, time_embedding
from .schedule import NoiseSchedule


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    # abort when the loss stays above divergence_factor * initial loss for
    # divergence_patience consecutive steps
    divergence_factor: float = 10.0
    divergence_patience: int = 100

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be positive")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be >= 0")


def loss_and_grad(
    params: DenoiserParams,
    x0_batch: np.ndarray,
    cond_batch: np.ndarray,
    sched: NoiseSchedule,
    rng: np.random.Generator,
    t: np.ndarray | None = None,
    noise: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """One minibatch of the noise-prediction objective.

    For each item a step t is drawn uniformly from [1, T] and standard
    normal noise is injected; the loss is the mean squared residual between
    injected and predicted noise over the batch and all pixels, and the
    gradient is computed by reverse-mode differentiation through the
    denoiser. Accumulation of the scalar loss is in float64; everything
    else runs in the parameter dtype.

    Explicit ``t``/``noise`` arrays replace the random draws (diagnostics
    and gradient checking); otherwise both come from ``rng``.
    """
    x0_batch = np.asarray(x0_batch)
    cond_batch = np.asarray(cond_batch)
    if x0_batch.ndim != 3 or cond_batch.ndim != 4 or len(x0_batch) != len(cond_batch):
        raise ValueError("expected x0 (B, H, W) and conditions (B, C, H, W) of equal length")
    if len(x0_batch) == 0:
        raise ValueError("empty batch")
    dtype = params.weights.dtype
    b, h, w = x0_batch.shape
    if t is None:
        t = rng.integers(1, sched.T + 1, size=b)
    else:
        t = np.asarray(t)
        if t.shape != (b,) or t.min() < 1 or t.max() > sched.T:
            raise ValueError("explicit t must be (B,) within [1, T]")
    if noise is None:
        noise = rng.standard_normal((b, h, w)).astype(dtype)
    else:
        noise = np.asarray(noise, dtype=dtype)
        if noise.shape != x0_batch.shape:
            raise ValueError("explicit noise must match the x0 batch shape")
    x0 = x0_batch.astype(dtype, copy=False)
    ab = sched.alpha_bar[t - 1]
    signal = np.sqrt(ab).astype(dtype)[:, None, None]
    corruption = np.sqrt(1.0 - ab).astype(dtype)[:, None, None]
    x_t = signal * x0 + corruption * noise

    net_in = np.concatenate([x_t[:, None], cond_batch.astype(dtype, copy=False)], axis=1)
    emb = time_embedding(t.astype(np.float64), params.arch.time_embed_dim)
    out, cache = _forward(params, net_in, emb, keep_cache=True)
    resid = out[:, 0] - noise
    loss = float(np.mean(resid.astype(np.float64) ** 2))
    if not math.isfinite(loss):
        raise NumericalError("non-finite training loss")
    dout = (resid * np.asarray(2.0 / resid.size, dtype=dtype))[:, None]
    grads = _backward(params, cache, dout, emb)
    return loss, grads


def train(
    params: DenoiserParams,
    targets: np.ndarray,
    conditions: np.ndarray,
    sched: NoiseSchedule,
    cfg: TrainConfig,
) -> tuple[DenoiserParams, list[float]]:
    """AdamW over minibatches; returns updated params and the loss trace.

    Minibatch indices, step draws, and noise all come from one generator
    seeded by cfg.seed, so reruns produce bit-identical traces.
    """
    targets = np.asarray(targets)
    conditions = np.asarray(conditions)
    if len(targets) < 1 or len(targets) != len(conditions):
        raise ValueError("dataset must be nonempty with matching targets/conditions")
    n = len(targets)
    rng = np.random.default_rng(cfg.seed)
    weights = params.weights.copy()
    live = DenoiserParams(params.arch, weights)
    # float64 moments so squared gradients cannot overflow silently
    m = np.zeros(weights.size, dtype=np.float64)
    v = np.zeros(weights.size, dtype=np.float64)
    trace: list[float] = []
    consecutive_high = 0
    for step in range(1, cfg.steps + 1):
        idx = rng.integers(0, n, size=cfg.batch_size)
        loss, grads = loss_and_grad(live, targets[idx], conditions[idx], sched, rng)
        if not np.all(np.isfinite(grads)):
            raise NumericalError(f"non-finite gradients at step {step}")
        grads = grads.astype(np.float64, copy=False)
        trace.append(loss)
        if loss > cfg.divergence_factor * trace[0]:
            consecutive_high += 1
            if consecutive_high >= cfg.divergence_patience:
                raise TrainingDivergedError(
                    f"loss stayed above {cfg.divergence_factor}x the initial loss "
                    f"for {cfg.divergence_patience} steps (step {step})",
                    trace,
                )
        else:
            consecutive_high = 0
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * grads
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * grads * grads
        m_hat = m / (1.0 - cfg.beta1**step)
        v_hat = v / (1.0 - cfg.beta2**step)
        weights -= cfg.learning_rate * (
            m_hat / (np.sqrt(v_hat) + cfg.adam_eps) + cfg.weight_decay * weights
        )
    return live, trace
