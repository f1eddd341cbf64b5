"""Image-fidelity metrics: SSIM, PSNR, MAE, and their aggregation.

SSIM uses the standard 11x11 Gaussian window (sigma 1.5) with k1 = 0.01,
k2 = 0.03; the local map is computed over fully-interior window positions
only. The dynamic range L must be supplied by the caller; for flow maps
``evaluate_pair`` uses the reference's robust (percentile) range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .contrast import percentile_bounds


@dataclass(frozen=True)
class SsimConfig:
    window_size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    L: float = 1.0

    def __post_init__(self):
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise ValueError("window_size must be odd and positive")
        if self.sigma <= 0 or self.L <= 0:
            raise ValueError("sigma and L must be positive")


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    """Separable 2D Gaussian window normalized to sum 1."""
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    window = np.outer(g, g)
    return window / window.sum()


def _check_same_shape(pred: np.ndarray, ref: np.ndarray) -> None:
    if pred.shape != ref.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {ref.shape}")


def mse(pred: np.ndarray, ref: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    _check_same_shape(pred, ref)
    return float(np.mean((pred - ref) ** 2))


def psnr(pred: np.ndarray, ref: np.ndarray, L: float) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs report +inf."""
    if L <= 0:
        raise ValueError("dynamic range L must be positive")
    err = mse(pred, ref)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(L * L / err)


def mae(pred: np.ndarray, ref: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    _check_same_shape(pred, ref)
    return float(np.mean(np.abs(pred - ref)))


def _local_mean(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    size = window.shape[0]
    views = sliding_window_view(img, (size, size))
    return np.einsum("ijkl,kl->ij", views, window)


def ssim(pred: np.ndarray, ref: np.ndarray, cfg: SsimConfig = SsimConfig()) -> float:
    """Mean structural similarity over Gaussian-weighted local windows."""
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    _check_same_shape(pred, ref)
    if min(pred.shape) < cfg.window_size:
        raise ValueError(f"images smaller than the {cfg.window_size}x{cfg.window_size} window")
    window = gaussian_window(cfg.window_size, cfg.sigma)
    mu1 = _local_mean(pred, window)
    mu2 = _local_mean(ref, window)
    var1 = _local_mean(pred * pred, window) - mu1 * mu1
    var2 = _local_mean(ref * ref, window) - mu2 * mu2
    cov = _local_mean(pred * ref, window) - mu1 * mu2
    c1 = (cfg.k1 * cfg.L) ** 2
    c2 = (cfg.k2 * cfg.L) ** 2
    local = ((2 * mu1 * mu2 + c1) * (2 * cov + c2)) / ((mu1 * mu1 + mu2 * mu2 + c1) * (var1 + var2 + c2))
    return float(local.mean())


def evaluate_pair(pred: np.ndarray, ref: np.ndarray) -> dict[str, float]:
    """SSIM/PSNR/MAE of a flow-map pair, with L = the reference's robust range.

    Both maps must already be in the same (denormalized) unit convention.
    """
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    _check_same_shape(pred, ref)
    bounds = percentile_bounds(ref)
    L = bounds.hi - bounds.lo
    return {
        "ssim": ssim(pred, ref, SsimConfig(L=L)),
        "psnr_db": psnr(pred, ref, L),
        "mae": mae(pred, ref),
    }


def aggregate(rows: list[dict[str, float]]) -> dict[str, float]:
    """Population mean and std of each metric over per-sequence rows."""
    if not rows:
        raise ValueError("nothing to aggregate")
    keys = rows[0].keys()
    out: dict[str, float] = {}
    for key in keys:
        values = np.array([row[key] for row in rows], dtype=np.float64)
        out[f"{key}_mean"] = float(values.mean())
        out[f"{key}_std"] = float(values.std())
    return out
