"""Temporal speckle contrast, the flow prior, and robust normalization.

Per-pixel temporal contrast K = sigma / (mu + eps) uses the population
(1/N) standard deviation, computed in two passes. The flow prior
F = 1 / (K^2 + eps) is a relative flow surrogate, not an absolute
calibration: lower contrast means faster flow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_CONTRAST_EPS = 1e-6
DEFAULT_FLOW_EPS = 1e-6


@dataclass(frozen=True)
class NormalizationRecord:
    """Clip values of a robust normalization; needed to invert it."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise ValueError("normalization bounds must be finite")
        if not self.lo < self.hi:
            raise ValueError(f"need lo < hi, got [{self.lo}, {self.hi}]")


def temporal_stats(seq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel temporal mean and population standard deviation.

    Two-pass computation in float64; the 1/N normalization is used (not
    1/(N-1)), so a two-value pixel series {1, 3} gives sigma = 1.
    """
    seq = np.asarray(seq)
    if seq.ndim != 3:
        raise ValueError("expected an (N, H, W) sequence")
    if seq.shape[0] < 2:
        raise ValueError("need at least 2 frames for temporal statistics")
    seq = seq.astype(np.float64, copy=False)
    mu = seq.mean(axis=0)
    sigma = np.sqrt(np.mean((seq - mu) ** 2, axis=0))
    return mu, sigma


def contrast_map(mu: np.ndarray, sigma: np.ndarray, eps: float = DEFAULT_CONTRAST_EPS) -> np.ndarray:
    """Temporal contrast K = sigma / (mu + eps)."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if mu.shape != sigma.shape:
        raise ValueError(f"shape mismatch: {mu.shape} vs {sigma.shape}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    return sigma / (mu + eps)


def flow_prior(k: np.ndarray, eps: float = DEFAULT_FLOW_EPS) -> np.ndarray:
    """Flow surrogate F = 1 / (K^2 + eps); strictly positive and finite."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    k = np.asarray(k, dtype=np.float64)
    return 1.0 / (k * k + eps)


def percentile_bounds(values: np.ndarray, lo_pct: float = 0.5, hi_pct: float = 99.5) -> NormalizationRecord:
    """Clip bounds at the given percentiles (linear order-statistic interpolation)."""
    values = np.asarray(values, dtype=np.float64)
    if not 0.0 <= lo_pct < hi_pct <= 100.0:
        raise ValueError("need 0 <= lo_pct < hi_pct <= 100")
    lo, hi = np.percentile(values, [lo_pct, hi_pct])
    if not hi > lo:
        raise ValueError("degenerate map: percentile clip range is empty")
    return NormalizationRecord(float(lo), float(hi))


def robust_normalize(
    values: np.ndarray,
    lo_pct: float = 0.5,
    hi_pct: float = 99.5,
) -> tuple[np.ndarray, NormalizationRecord]:
    """Percentile-clip a map and map it affinely into [-1, 1].

    Values at the lo/hi percentiles map to -1/+1 exactly; values outside are
    clamped. Heavy-tailed maps (the flow prior in particular) would otherwise
    destabilize squared-error training. Raises ValueError on constant maps.
    """
    values = np.asarray(values, dtype=np.float64)
    record = percentile_bounds(values, lo_pct, hi_pct)
    scaled = 2.0 * (values - record.lo) / (record.hi - record.lo) - 1.0
    return np.clip(scaled, -1.0, 1.0), record


def denormalize(normalized: np.ndarray, record: NormalizationRecord) -> np.ndarray:
    """Invert robust_normalize over [-1, 1].

    Inputs outside [-1, 1] are clamped first: values clipped away by the
    forward mapping are not recoverable and land on the lo/hi bounds.
    """
    normalized = np.clip(np.asarray(normalized, dtype=np.float64), -1.0, 1.0)
    return (normalized + 1.0) * 0.5 * (record.hi - record.lo) + record.lo
