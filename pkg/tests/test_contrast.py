"""Temporal statistics, contrast/flow maps, robust normalization."""

import numpy as np
import pytest

from speckleflow.contrast import (
    NormalizationRecord,
    contrast_map,
    denormalize,
    flow_prior,
    percentile_bounds,
    robust_normalize,
    temporal_stats,
)


def naive_temporal_stats(seq):
    """Independent per-pixel two-pass oracle in plain python loops."""
    n, h, w = seq.shape
    mu = np.zeros((h, w))
    sigma = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            series = [float(seq[t, i, j]) for t in range(n)]
            m = sum(series) / n
            var = sum((x - m) ** 2 for x in series) / n
            mu[i, j] = m
            sigma[i, j] = var**0.5
    return mu, sigma


def test_temporal_stats_constant_sequence():
    seq = np.full((10, 4, 4), 7.0)
    mu, sigma = temporal_stats(seq)
    assert np.all(mu == 7.0)
    assert np.all(sigma == 0.0)


def test_temporal_stats_hand_values():
    # pixel series {1, 3}: population normalization gives sigma = 1, not sqrt(2)
    seq = np.array([[[1.0]], [[3.0]]]).reshape(2, 1, 1)
    seq = np.tile(seq, (1, 2, 2))
    mu, sigma = temporal_stats(seq)
    assert np.allclose(mu, 2.0, atol=0)
    assert np.allclose(sigma, 1.0, atol=0)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_temporal_stats_matches_naive_oracle(seed):
    rng = np.random.default_rng(seed)
    seq = rng.random((50, 32, 32)) * 100
    mu, sigma = temporal_stats(seq)
    mu_o, sigma_o = naive_temporal_stats(seq)
    assert np.abs(mu - mu_o).max() / np.abs(mu_o).max() < 1e-6
    assert np.abs(sigma - sigma_o).max() / max(np.abs(sigma_o).max(), 1e-12) < 1e-6


def test_temporal_stats_validation():
    with pytest.raises(ValueError):
        temporal_stats(np.zeros((1, 4, 4)))
    with pytest.raises(ValueError):
        temporal_stats(np.zeros((4, 4)))


def test_contrast_map_zero_sigma():
    k = contrast_map(np.full((3, 3), 5.0), np.zeros((3, 3)))
    assert np.all(k == 0.0)


def test_contrast_map_direct_value():
    k = contrast_map(np.array([[2.0]]), np.array([[1.0]]), eps=1e-12)
    assert abs(k[0, 0] - 0.5) < 1e-9


def test_contrast_map_scale_invariance():
    # K is homogeneous of degree 0 in the intensities
    rng = np.random.default_rng(3)
    seq = rng.random((20, 8, 8)) + 0.5
    mu, sigma = temporal_stats(seq)
    mu10, sigma10 = temporal_stats(10.0 * seq)
    k = contrast_map(mu, sigma, eps=1e-12)
    k10 = contrast_map(mu10, sigma10, eps=1e-12)
    assert np.abs(k - k10).max() < 1e-9


def test_contrast_map_validation():
    with pytest.raises(ValueError):
        contrast_map(np.zeros((2, 2)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        contrast_map(np.zeros((2, 2)), np.zeros((2, 2)), eps=0.0)


def test_flow_prior_values():
    f = flow_prior(np.array([[0.5]]), eps=1e-12)
    assert abs(f[0, 0] - 4.0) < 1e-8
    f0 = flow_prior(np.zeros((2, 2)), eps=1e-6)
    assert np.allclose(f0, 1e6)


def test_flow_prior_monotone_decreasing():
    ks = np.linspace(0.0, 1.0, 101)
    f = flow_prior(ks, eps=1e-6)
    assert np.all(np.diff(f) < 0)


def test_robust_normalize_endpoints_and_midpoint():
    rng = np.random.default_rng(4)
    values = rng.random((40, 40)) * 50
    normalized, record = robust_normalize(values)
    for v, expected in ((record.lo, -1.0), (record.hi, 1.0), ((record.lo + record.hi) / 2, 0.0)):
        got = np.clip(2 * (v - record.lo) / (record.hi - record.lo) - 1, -1, 1)
        assert abs(got - expected) < 1e-12
    assert normalized.min() >= -1.0 and normalized.max() <= 1.0


def test_robust_normalize_integer_ramp():
    # 0..100: the 0.5/99.5 percentiles are 0.5 and 99.5; the two extreme
    # values clamp to -1/+1 and the other 99 stay strictly inside
    values = np.arange(101, dtype=float)
    normalized, record = robust_normalize(values)
    assert record.lo == pytest.approx(0.5)
    assert record.hi == pytest.approx(99.5)
    strictly_inside = np.sum((normalized > -1.0) & (normalized < 1.0))
    assert strictly_inside == 99
    assert normalized[0] == -1.0 and normalized[-1] == 1.0


def test_robust_normalize_round_trip():
    rng = np.random.default_rng(5)
    values = rng.normal(10, 3, (64, 64))
    normalized, record = robust_normalize(values)
    restored = denormalize(normalized, record)
    in_range = (values >= record.lo) & (values <= record.hi)
    assert np.abs(restored[in_range] - values[in_range]).max() < 1e-6


def test_robust_normalize_monotone():
    rng = np.random.default_rng(6)
    values = np.sort(rng.normal(0, 5, 500))
    normalized, _ = robust_normalize(values)
    assert np.all(np.diff(normalized) >= 0)


def test_robust_normalize_rejects_degenerate():
    with pytest.raises(ValueError):
        robust_normalize(np.full((8, 8), 3.0))
    # two distinct values but identical clip percentiles
    values = np.zeros(1000)
    values[-1] = 1.0
    with pytest.raises(ValueError):
        robust_normalize(values)


def test_denormalize_endpoints_and_clipping():
    record = NormalizationRecord(lo=2.0, hi=6.0)
    assert denormalize(np.array(-1.0), record) == 2.0
    assert denormalize(np.array(1.0), record) == 6.0
    # out-of-range inputs are not recoverable and land on the bounds
    assert denormalize(np.array(1.7), record) == 6.0
    assert denormalize(np.array(-3.0), record) == 2.0


def test_normalization_record_validation():
    with pytest.raises(ValueError):
        NormalizationRecord(lo=1.0, hi=1.0)
    with pytest.raises(ValueError):
        NormalizationRecord(lo=np.nan, hi=1.0)


def test_percentile_bounds_linear_interpolation():
    values = np.arange(11, dtype=float)  # 0..10
    record = percentile_bounds(values, 25.0, 75.0)
    assert record.lo == pytest.approx(2.5)
    assert record.hi == pytest.approx(7.5)
