"""Conditioning tensor: normalized aligned frames plus the flow prior."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..contrast import NormalizationRecord, robust_normalize


@dataclass
class Condition:
    """Channelwise conditioning for the denoiser.

    Channel order is the n_few aligned speckle frames (in their original
    temporal order) followed by exactly one flow-prior channel, every
    channel robust-normalized into [-1, 1]. ``records`` holds the
    per-channel normalization bounds in the same order.
    """

    channels: np.ndarray
    n_few: int
    records: tuple[NormalizationRecord, ...]

    def __post_init__(self):
        self.channels = np.asarray(self.channels)
        if self.channels.ndim != 3:
            raise ValueError("condition channels must be (C, H, W)")
        if self.channels.shape[0] != self.n_few + 1:
            raise ValueError(
                f"got {self.channels.shape[0]} channels for n_few={self.n_few}; expected n_few + 1"
            )
        if len(self.records) != self.n_few + 1:
            raise ValueError("need one normalization record per channel")
        if np.abs(self.channels).max() > 1.0 + 1e-6:
            raise ValueError("condition channels must lie in [-1, 1]")

    @property
    def prior_record(self) -> NormalizationRecord:
        return self.records[-1]


def make_condition(
    aligned_few: np.ndarray,
    prior: np.ndarray,
    lo_pct: float = 0.5,
    hi_pct: float = 99.5,
) -> Condition:
    """Normalize the few aligned frames and the prior into one channel stack.

    Normalization is per map, so each channel gets its own record; frame
    order is preserved (the tensor is order-sensitive by contract).
    """
    aligned_few = np.asarray(aligned_few)
    prior = np.asarray(prior)
    if aligned_few.ndim != 3:
        raise ValueError("aligned_few must be (n_few, H, W)")
    if prior.shape != aligned_few.shape[1:]:
        raise ValueError(f"prior shape {prior.shape} does not match frames {aligned_few.shape[1:]}")
    channels = []
    records = []
    for frame in aligned_few:
        normalized, record = robust_normalize(frame, lo_pct, hi_pct)
        channels.append(normalized)
        records.append(record)
    normalized_prior, prior_record = robust_normalize(prior, lo_pct, hi_pct)
    channels.append(normalized_prior)
    records.append(prior_record)
    stack = np.stack(channels).astype(np.float32)
    return Condition(channels=stack, n_few=aligned_few.shape[0], records=tuple(records))
