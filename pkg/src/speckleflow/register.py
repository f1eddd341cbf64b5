"""Phase-correlation motion stabilization for speckle sequences.

Each frame's global integer translation against a reference frame is
estimated from the peak of the inverse FFT of the normalized cross-power
spectrum, then undone, so that downstream temporal statistics are computed
on aligned pixels.

Sign convention: ``estimate_shift(frame, ref)`` returns the displacement d
such that ``apply_shift(frame, d) == ref`` for a pure circular translation.
Equivalently, ``estimate_shift(np.roll(ref, (a, b), axis=(0, 1)), ref)``
returns ``(a, b)``.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


class Displacement(NamedTuple):
    """Integer pixel translation (rows down, columns right)."""

    dy: int
    dx: int


class ShiftEstimate(NamedTuple):
    """Result of phase correlation on one frame pair.

    ``peak`` is the height of the correlation-surface maximum (1.0 for a
    noise-free pure translation); ``low_confidence`` is set when the peak
    falls below the caller's threshold, in which case ``shift`` is (0, 0).
    """

    shift: Displacement
    peak: float
    low_confidence: bool


def _check_pair(frame: np.ndarray, ref: np.ndarray) -> None:
    if frame.ndim != 2 or ref.ndim != 2:
        raise ValueError("expected 2D images")
    if frame.shape != ref.shape:
        raise ValueError(f"shape mismatch: {frame.shape} vs {ref.shape}")
    h, w = frame.shape
    if h % 2 or w % 2:
        # keeps the wraparound decode rule (index > n/2 -> index - n) unambiguous
        raise ValueError(f"image dimensions must be even, got {frame.shape}")


def _normalized_cross_power(numerator: np.ndarray, eps: float) -> np.ndarray:
    mag = np.abs(numerator)
    peak = mag.max()
    if peak == 0.0:
        # both spectra vanish (all-zero images): no phase information at all
        return np.zeros_like(numerator)
    # eps is relative to the peak numerator magnitude so the default is
    # scale-free; |R| stays < 1 everywhere.
    return numerator / (mag + eps * peak)


def cross_power_spectrum(frame: np.ndarray, ref: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Normalized cross-power spectrum of ``frame`` against ``ref``.

    Returns R(u) = F(frame)(u) * conj(F(ref))(u) / (|...| + eps'), with the
    regularizer eps' = eps * max|numerator|. For a circular translation the
    phase of R is a linear ramp and |R| is ~1 wherever the spectrum is
    nonzero.
    """
    frame = np.asarray(frame, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    _check_pair(frame, ref)
    if eps <= 0:
        raise ValueError("eps must be positive")
    numerator = np.fft.fft2(frame) * np.conj(np.fft.fft2(ref))
    return _normalized_cross_power(numerator, eps)


def _decode_index(p: int, n: int) -> int:
    # correlation peak index p in [0, n) decodes to a signed shift, with
    # indices past n/2 wrapping to the negative side
    return p - n if p > n // 2 else p


def _peak_shift(surface: np.ndarray, min_peak: float) -> ShiftEstimate:
    h, w = surface.shape
    peak = float(surface.max())
    if peak < min_peak:
        return ShiftEstimate(Displacement(0, 0), peak, True)
    flat = np.flatnonzero(surface == peak)
    rows, cols = np.unravel_index(flat, surface.shape)
    candidates = [
        Displacement(_decode_index(int(r), h), _decode_index(int(c), w))
        for r, c in zip(rows, cols)
    ]
    # ties: smallest L1 displacement, then lexicographic (dy, dx)
    best = min(candidates, key=lambda d: (abs(d.dy) + abs(d.dx), d.dy, d.dx))
    if not (abs(best.dy) < h / 2 and abs(best.dx) < w / 2):
        # a peak exactly on the wraparound boundary has no unambiguous sign;
        # legitimate shifts never land there, so treat it as unregistrable
        return ShiftEstimate(Displacement(0, 0), peak, True)
    return ShiftEstimate(best, peak, False)


def estimate_shift(
    frame: np.ndarray,
    ref: np.ndarray,
    eps: float = 1e-8,
    min_peak: float = 0.03,
) -> ShiftEstimate:
    """Estimate the integer translation of ``frame`` relative to ``ref``.

    The returned displacement d satisfies ``apply_shift(frame, d) == ref``
    for inputs related by a circular shift. When the correlation peak is
    below ``min_peak`` the input is considered unregistrable and a flagged
    zero shift is returned instead of aborting.
    """
    r = cross_power_spectrum(frame, ref, eps=eps)
    surface = np.fft.ifft2(r).real
    return _peak_shift(surface, min_peak)


def apply_shift(
    frame: np.ndarray,
    d: tuple[int, int],
    mode: str = "circular",
    return_mask: bool = False,
):
    """Translate a frame by displacement d: output(x) = frame(x + d).

    ``circular`` wraps around the image borders; ``zero_fill`` writes zeros
    into vacated pixels. With ``return_mask=True`` a boolean validity mask is
    returned alongside (all-true in circular mode).
    """
    frame = np.asarray(frame)
    if frame.ndim != 2:
        raise ValueError("expected a 2D frame")
    h, w = frame.shape
    dy, dx = int(d[0]), int(d[1])
    # applying a boundary shift (n/2) is well-defined even though decoding
    # one is not, hence <= here versus the strict bound on estimates
    if not (abs(dy) <= h / 2 and abs(dx) <= w / 2):
        raise ValueError(f"shift {(dy, dx)} outside decodable range for {frame.shape}")
    if mode == "circular":
        # out[y, x] = frame[y + dy, x + dx] with wraparound == roll by -d
        out = np.roll(frame, shift=(-dy, -dx), axis=(0, 1))
        if return_mask:
            return out, np.ones(frame.shape, dtype=bool)
        return out
    if mode == "zero_fill":
        out = np.zeros_like(frame)
        mask = np.zeros(frame.shape, dtype=bool)
        y0, y1 = max(0, -dy), min(h, h - dy)
        x0, x1 = max(0, -dx), min(w, w - dx)
        if y1 > y0 and x1 > x0:
            out[y0:y1, x0:x1] = frame[y0 + dy : y1 + dy, x0 + dx : x1 + dx]
            mask[y0:y1, x0:x1] = True
        if return_mask:
            return out, mask
        return out
    raise ValueError(f"unknown shift mode {mode!r}")


def stabilize(
    seq: np.ndarray,
    eps: float = 1e-8,
    mode: str = "circular",
    min_peak: float = 0.03,
    reference: str = "first",
) -> tuple[np.ndarray, list[Displacement], list[float]]:
    """Align every frame of a sequence to a common reference frame.

    Returns (aligned, shifts, confidence). With the default
    ``reference="first"`` the first frame is the reference, its shift is
    (0, 0) and its confidence 1.0. ``reference="median"`` registers against
    the per-pixel temporal median composite instead (robustness experiments
    only; in that mode frame 0 may also move).

    Low-confidence frames are passed through with a zero shift and their
    (sub-threshold) peak value reported; the caller decides whether to drop
    them.
    """
    seq = np.asarray(seq)
    if seq.ndim != 3:
        raise ValueError("expected an (N, H, W) sequence")
    n = seq.shape[0]
    if n < 2:
        raise ValueError("need at least 2 frames to stabilize")
    if not np.all(np.isfinite(seq)) or seq.min() < 0:
        raise ValueError("sequence intensities must be finite and nonnegative")
    if reference == "first":
        ref = np.asarray(seq[0], dtype=np.float64)
    elif reference == "median":
        ref = np.median(np.asarray(seq, dtype=np.float64), axis=0)
    else:
        raise ValueError(f"unknown reference {reference!r}")
    _check_pair(np.asarray(seq[0], dtype=np.float64), ref)

    # the reference spectrum is shared by every frame
    ref_spec_conj = np.conj(np.fft.fft2(ref))
    aligned = np.empty_like(seq)
    shifts: list[Displacement] = []
    confidence: list[float] = []
    for t in range(n):
        if t == 0 and reference == "first":
            est = ShiftEstimate(Displacement(0, 0), 1.0, False)
        else:
            numerator = np.fft.fft2(np.asarray(seq[t], dtype=np.float64)) * ref_spec_conj
            surface = np.fft.ifft2(_normalized_cross_power(numerator, eps)).real
            est = _peak_shift(surface, min_peak)
        aligned[t] = apply_shift(seq[t], est.shift, mode=mode)
        shifts.append(est.shift)
        confidence.append(est.peak)
    return aligned, shifts, confidence
