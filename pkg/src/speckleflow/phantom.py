"""Synthetic speckle phantoms with known contrast, motion, and reference flow.

Stands in for a real acquisition: each phantom carries a per-pixel true
contrast map (vessels rasterized onto a uniform background), a global
integer translation per frame, and a multiframe reference flow map computed
from the unshifted stack.

Noise model: multiplicative Gaussian, I = mu * max(0, 1 + k * z) with z
standard normal per pixel per frame. This makes the temporal contrast of a
static pixel converge to k, so the contrast pipeline has an analytic ground
truth. Fully-developed exponential speckle would pin K near 1 and cannot
express a spatial flow map. Clamping at zero is negligible for k <= 0.35
(negative-excursion probability below 5e-4).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import contrast
from .register import Displacement, apply_shift

MAX_K_TRUE = 0.35

# per-frame noise stream: philox4x64 keyed by (seed, frame index), standard
# normals via numpy's ziggurat; recorded in output metadata for reproducibility
RNG_TRANSFORM = "philox4x64(key=(seed,frame))/numpy-standard_normal"


@dataclass(frozen=True)
class Vessel:
    """A straight vessel segment: center line, radius, true contrast.

    ``intensity_scale`` dims the mean intensity inside the vessel (blood
    absorbs more than background tissue); must stay positive.
    """

    y0: float
    x0: float
    y1: float
    x1: float
    radius: float
    k_true: float
    intensity_scale: float = 0.8


@dataclass(frozen=True)
class PhantomSpec:
    """Everything needed to synthesize one phantom deterministically."""

    height: int
    width: int
    n_frames: int
    vessels: tuple[Vessel, ...]
    background_k: float
    base_intensity: float
    motion: tuple[Displacement, ...]
    seed: int
    boundary: str = "circular"


@dataclass
class PhantomGroundTruth:
    """Oracle data for one synthesized phantom.

    ``reference_flow`` is the flow map obtained from the full unshifted
    stack, i.e. what a perfectly registered long acquisition would give.
    """

    k_true_map: np.ndarray
    mu_map: np.ndarray
    shifts: list[Displacement] = field(default_factory=list)
    reference_flow: np.ndarray | None = None


def validate_spec(spec: PhantomSpec) -> None:
    if spec.height < 2 or spec.width < 2 or spec.height % 2 or spec.width % 2:
        raise ValueError("phantom dimensions must be even and >= 2")
    if spec.n_frames < 1:
        raise ValueError("need at least one frame")
    if spec.base_intensity <= 0:
        raise ValueError("base_intensity must be positive")
    if not 0.0 <= spec.background_k <= MAX_K_TRUE:
        raise ValueError(f"background_k must be in [0, {MAX_K_TRUE}]")
    if spec.boundary not in ("circular", "zero_fill"):
        raise ValueError(f"unknown boundary mode {spec.boundary!r}")
    for v in spec.vessels:
        if v.y0 == v.y1 and v.x0 == v.x1:
            raise ValueError("degenerate zero-length vessel segment")
        if v.radius <= 0:
            raise ValueError("vessel radius must be positive")
        if not 0.0 <= v.k_true <= MAX_K_TRUE:
            raise ValueError(f"vessel k_true must be in [0, {MAX_K_TRUE}]")
        if v.intensity_scale <= 0:
            raise ValueError("vessel intensity_scale must be positive")
    if len(spec.motion) != spec.n_frames:
        raise ValueError("motion list length must equal n_frames")
    if tuple(spec.motion[0]) != (0, 0):
        raise ValueError("first motion entry must be (0, 0)")
    for dy, dx in spec.motion:
        if not (abs(dy) < spec.height / 2 and abs(dx) < spec.width / 2):
            raise ValueError(f"motion {(dy, dx)} outside decodable range")


def _segment_distance(yy: np.ndarray, xx: np.ndarray, v: Vessel) -> np.ndarray:
    # distance from each pixel center to the closest point of the segment
    sy, sx = v.y1 - v.y0, v.x1 - v.x0
    length_sq = sy * sy + sx * sx
    t = np.clip(((yy - v.y0) * sy + (xx - v.x0) * sx) / length_sq, 0.0, 1.0)
    return np.hypot(yy - (v.y0 + t * sy), xx - (v.x0 + t * sx))


def build_phantom(spec: PhantomSpec) -> tuple[np.ndarray, np.ndarray]:
    """Rasterize the phantom geometry into (mu_map, k_true_map).

    A pixel belongs to a vessel when its distance to the segment is at most
    the radius. Where vessels overlap, the smallest k_true wins (fastest
    flow), and that vessel's intensity scale applies.
    """
    validate_spec(spec)
    yy, xx = np.meshgrid(
        np.arange(spec.height, dtype=np.float64),
        np.arange(spec.width, dtype=np.float64),
        indexing="ij",
    )
    vessel_k = np.full((spec.height, spec.width), np.inf)
    vessel_scale = np.ones((spec.height, spec.width))
    for v in spec.vessels:
        inside = _segment_distance(yy, xx, v) <= v.radius
        takes = inside & (v.k_true < vessel_k)
        vessel_k[takes] = v.k_true
        vessel_scale[takes] = v.intensity_scale
    covered = np.isfinite(vessel_k)
    k_true_map = np.where(covered, vessel_k, spec.background_k)
    mu_map = spec.base_intensity * np.where(covered, vessel_scale, 1.0)
    return mu_map, k_true_map


def _frame_noise(seed: int, t: int, shape: tuple[int, int]) -> np.ndarray:
    bitgen = np.random.Philox(key=np.array([seed & 0xFFFFFFFFFFFFFFFF, t], dtype=np.uint64))
    return np.random.Generator(bitgen).standard_normal(shape)


def synthesize_sequence(
    spec: PhantomSpec,
    contrast_eps: float = contrast.DEFAULT_CONTRAST_EPS,
    flow_eps: float = contrast.DEFAULT_FLOW_EPS,
) -> tuple[np.ndarray, PhantomGroundTruth]:
    """Synthesize a moving speckle sequence and its ground truth.

    Frame t is shift(mu * max(0, 1 + k * z_t), motion[t]) with z_t drawn
    from a per-frame substream keyed by (seed, t), so the result is
    bit-reproducible and independent of synthesis order. The reference flow
    is computed on the unshifted stack with the given eps values.
    """
    validate_spec(spec)
    mu_map, k_true_map = build_phantom(spec)
    frames = np.empty((spec.n_frames, spec.height, spec.width), dtype=np.float32)
    unshifted = np.empty_like(frames)
    for t in range(spec.n_frames):
        z = _frame_noise(spec.seed, t, (spec.height, spec.width))
        base = mu_map * np.maximum(0.0, 1.0 + k_true_map * z)
        unshifted[t] = base
        frames[t] = apply_shift(base, spec.motion[t], mode=spec.boundary)
    gt = PhantomGroundTruth(k_true_map=k_true_map, mu_map=mu_map, shifts=list(spec.motion))
    if spec.n_frames >= 2:
        mu, sigma = contrast.temporal_stats(unshifted)
        k = contrast.contrast_map(mu, sigma, eps=contrast_eps)
        gt.reference_flow = contrast.flow_prior(k, eps=flow_eps)
    return frames, gt


def random_walk_motion(
    n_frames: int, max_shift: int, rng: np.random.Generator
) -> tuple[Displacement, ...]:
    """Bounded random-walk trajectory: steps in {-1,0,1}^2, reflected at +-max_shift.

    Mimics slow subject drift at a controllable amplitude; the first entry
    is always (0, 0).
    """
    if max_shift < 0:
        raise ValueError("max_shift must be >= 0")
    pos = np.zeros(2, dtype=np.int64)
    motion = [Displacement(0, 0)]
    for _ in range(n_frames - 1):
        pos = pos + rng.integers(-1, 2, size=2)
        for axis in range(2):
            if pos[axis] > max_shift:
                pos[axis] = 2 * max_shift - pos[axis]
            elif pos[axis] < -max_shift:
                pos[axis] = -2 * max_shift - pos[axis]
        motion.append(Displacement(int(pos[0]), int(pos[1])))
    return tuple(motion)


def random_phantom_spec(
    seed: int,
    height: int = 32,
    width: int = 32,
    n_frames: int = 200,
    n_vessels: tuple[int, int] = (4, 6),
    radius_range: tuple[float, float] = (1.5, 3.0),
    k_range: tuple[float, float] = (0.04, 0.16),
    background_k: float = 0.2,
    base_intensity: float = 100.0,
    intensity_scale: float = 0.4,
    max_shift: int = 4,
    boundary: str = "circular",
) -> PhantomSpec:
    """Draw a random vessel layout and motion trajectory for the given seed.

    One seed, one phantom: geometry, contrast levels, and the walk are all
    derived from it, so datasets are reproducible and splittable by seed.
    """
    rng = np.random.default_rng(seed)
    count = int(rng.integers(n_vessels[0], n_vessels[1] + 1))
    min_len = min(height, width) / 4.0
    vessels = []
    for _ in range(count):
        for _attempt in range(100):
            y0, y1 = rng.uniform(0, height - 1, size=2)
            x0, x1 = rng.uniform(0, width - 1, size=2)
            if np.hypot(y1 - y0, x1 - x0) >= min_len:
                break
        vessels.append(
            Vessel(
                y0=float(y0),
                x0=float(x0),
                y1=float(y1),
                x1=float(x1),
                radius=float(rng.uniform(*radius_range)),
                k_true=float(rng.uniform(*k_range)),
                intensity_scale=intensity_scale,
            )
        )
    motion = random_walk_motion(n_frames, max_shift, rng)
    return PhantomSpec(
        height=height,
        width=width,
        n_frames=n_frames,
        vessels=tuple(vessels),
        background_k=background_k,
        base_intensity=base_intensity,
        motion=motion,
        seed=seed,
        boundary=boundary,
    )
