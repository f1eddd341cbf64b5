"""Run configuration: sectioned key = value files, parsed and validated.

One file describes one run. All sections must be present and all seeds
explicit; nothing falls back to ambient entropy, so a config hash plus the
code version pins a run completely.
"""

from __future__ import annotations

import hashlib
from configparser import ConfigParser, Error as ConfigParserError
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

REQUIRED_SECTIONS = ("phantom", "registration", "contrast", "diffusion", "evaluation", "seeds")


@dataclass(frozen=True)
class PhantomSection:
    height: int = 32
    width: int = 32
    n_frames: int = 200
    n_phantoms: int = 16
    vessel_count_min: int = 4
    vessel_count_max: int = 6
    vessel_radius_min: float = 1.5
    vessel_radius_max: float = 3.0
    vessel_k_min: float = 0.04
    vessel_k_max: float = 0.16
    background_k: float = 0.2
    base_intensity: float = 100.0
    intensity_scale: float = 0.4
    max_shift: int = 4
    boundary: str = "circular"


@dataclass(frozen=True)
class RegistrationSection:
    eps: float = 1e-8
    mode: str = "circular"
    min_peak: float = 0.03
    reference: str = "first"


@dataclass(frozen=True)
class ContrastSection:
    contrast_eps: float = 1e-6
    flow_eps: float = 1e-6
    lo_percentile: float = 0.5
    hi_percentile: float = 99.5


@dataclass(frozen=True)
class DiffusionSection:
    timesteps: int = 200
    beta_start: float = 5e-4
    beta_end: float = 0.1
    hidden_channels: int = 32
    n_layers: int = 4
    kernel_size: int = 3
    time_embed_dim: int = 32
    n_few: int = 5
    train_steps: int = 3000
    batch_size: int = 8
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    sample_steps: int = 20


@dataclass(frozen=True)
class EvaluationSection:
    metrics: str = "ssim,psnr,mae"


@dataclass(frozen=True)
class SeedsSection:
    phantom: int
    train: int
    sample: int


@dataclass(frozen=True)
class PipelineConfig:
    phantom: PhantomSection
    registration: RegistrationSection
    contrast: ContrastSection
    diffusion: DiffusionSection
    evaluation: EvaluationSection
    seeds: SeedsSection


def _coerce(section_name: str, key: str, raw: str, target_type):
    try:
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"[{section_name}] {key} = {raw!r}: expected {target_type.__name__}") from exc


def _parse_section(parser: ConfigParser, name: str, cls):
    section = parser[name]
    type_map = {"int": int, "float": float, "str": str}
    known = {f.name: type_map[f.type] for f in fields(cls)}
    for key in section:
        if key not in known:
            raise ConfigError(f"[{name}] has unknown key {key!r}")
    values = {key: _coerce(name, key, section[key], known[key]) for key in section}
    try:
        return cls(**values)
    except TypeError as exc:
        # a section field without a dataclass default was omitted
        raise ConfigError(f"[{name}]: {exc}") from exc


def _validate(cfg: PipelineConfig) -> None:
    ph = cfg.phantom
    if ph.height % 2 or ph.width % 2 or ph.height < 12 or ph.width < 12:
        raise ConfigError("phantom dimensions must be even and >= 12")
    if ph.n_phantoms < 2:
        raise ConfigError("need at least 2 phantoms (one per split)")
    if ph.n_frames < cfg.diffusion.n_few:
        raise ConfigError("n_frames must cover the few-frame input")
    if not 0 < ph.vessel_k_min <= ph.vessel_k_max <= 0.35:
        raise ConfigError("vessel k range must lie in (0, 0.35]")
    if not 0 < ph.background_k <= 0.35:
        raise ConfigError("background_k must lie in (0, 0.35]")
    if ph.max_shift < 0 or ph.max_shift >= min(ph.height, ph.width) / 2:
        raise ConfigError("max_shift must be inside the decodable range")
    di = cfg.diffusion
    if di.timesteps < 1 or not 0 < di.beta_start <= di.beta_end < 1:
        raise ConfigError("invalid noise schedule parameters")
    if di.sample_steps < 1 or di.sample_steps > di.timesteps:
        raise ConfigError("sample_steps must lie in [1, timesteps]")
    if di.n_few < 2:
        raise ConfigError("n_few must be >= 2 (the prior needs temporal statistics)")
    if cfg.registration.mode not in ("circular", "zero_fill"):
        raise ConfigError(f"unknown registration mode {cfg.registration.mode!r}")
    co = cfg.contrast
    if not 0 <= co.lo_percentile < co.hi_percentile <= 100:
        raise ConfigError("percentiles must satisfy 0 <= lo < hi <= 100")
    requested = {m.strip() for m in cfg.evaluation.metrics.split(",") if m.strip()}
    if not requested or not requested <= {"ssim", "psnr", "mae"}:
        raise ConfigError("evaluation metrics must be a subset of ssim, psnr, mae")


def parse_config_text(text: str) -> PipelineConfig:
    parser = ConfigParser()
    try:
        parser.read_string(text)
    except ConfigParserError as exc:
        raise ConfigError(f"config syntax error: {exc}") from exc
    missing = [name for name in REQUIRED_SECTIONS if name not in parser]
    if missing:
        raise ConfigError(f"missing config section(s): {', '.join(missing)}")
    for seed_key in ("phantom", "train", "sample"):
        if seed_key not in parser["seeds"]:
            raise ConfigError(f"[seeds] must explicitly set {seed_key!r}")
    cfg = PipelineConfig(
        phantom=_parse_section(parser, "phantom", PhantomSection),
        registration=_parse_section(parser, "registration", RegistrationSection),
        contrast=_parse_section(parser, "contrast", ContrastSection),
        diffusion=_parse_section(parser, "diffusion", DiffusionSection),
        evaluation=_parse_section(parser, "evaluation", EvaluationSection),
        seeds=_parse_section(parser, "seeds", SeedsSection),
    )
    _validate(cfg)
    return cfg


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"))


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def override_seeds(cfg: PipelineConfig, base_seed: int) -> PipelineConfig:
    """Derive all three seeds from one override value (CLI --seed-override)."""
    from dataclasses import replace

    return replace(
        cfg, seeds=SeedsSection(phantom=base_seed, train=base_seed + 1, sample=base_seed + 2)
    )


def render_config(cfg: PipelineConfig) -> str:
    """Serialize a config back to its canonical sectioned text form."""
    chunks = []
    for section_name in REQUIRED_SECTIONS:
        section = getattr(cfg, section_name)
        lines = [f"[{section_name}]"]
        for field in fields(section):
            lines.append(f"{field.name} = {getattr(section, field.name)}")
        chunks.append("\n".join(lines))
    return "\n\n".join(chunks) + "\n"


def default_config_text(n_phantoms: int = 16, seed: int = 100) -> str:
    """A ready-to-edit config with desk-scale defaults."""
    return f"""\
[phantom]
height = 32
width = 32
n_frames = 200
n_phantoms = {n_phantoms}
vessel_count_min = 4
vessel_count_max = 6
vessel_radius_min = 1.5
vessel_radius_max = 3.0
vessel_k_min = 0.04
vessel_k_max = 0.16
background_k = 0.2
base_intensity = 100.0
intensity_scale = 0.4
max_shift = 4
boundary = circular

[registration]
eps = 1e-8
mode = circular
min_peak = 0.03
reference = first

[contrast]
contrast_eps = 1e-6
flow_eps = 1e-6
lo_percentile = 0.5
hi_percentile = 99.5

[diffusion]
timesteps = 200
beta_start = 5e-4
beta_end = 0.1
hidden_channels = 32
n_layers = 4
kernel_size = 3
time_embed_dim = 32
n_few = 5
train_steps = 3000
batch_size = 8
learning_rate = 1e-3
weight_decay = 1e-4
sample_steps = 20

[evaluation]
metrics = ssim,psnr,mae

[seeds]
phantom = {seed}
train = {seed + 1}
sample = {seed + 2}
"""
