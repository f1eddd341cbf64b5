"""Config parsing, validation, rendering, and seed overrides."""

import pytest

from speckleflow.config import (
    config_hash,
    default_config_text,
    load_config,
    override_seeds,
    parse_config_text,
    render_config,
)
from speckleflow.errors import ConfigError


def test_default_config_parses():
    cfg = parse_config_text(default_config_text())
    assert cfg.phantom.height == 32
    assert cfg.diffusion.timesteps == 200
    assert cfg.seeds.phantom == 100


def test_render_round_trip():
    cfg = parse_config_text(default_config_text(n_phantoms=10, seed=55))
    assert parse_config_text(render_config(cfg)) == cfg


def test_load_config_file(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(default_config_text())
    cfg = load_config(path)
    assert cfg.phantom.n_phantoms == 16
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.ini")


def test_missing_section_rejected():
    text = default_config_text()
    text = text.replace("[diffusion]", "[diffusion_off]")
    with pytest.raises(ConfigError, match="diffusion"):
        parse_config_text(text)


def test_missing_seed_rejected():
    text = default_config_text().replace("sample = 102", "")
    with pytest.raises(ConfigError, match="sample"):
        parse_config_text(text)


def test_unknown_key_rejected():
    text = default_config_text().replace("[phantom]", "[phantom]\nmystery = 1")
    with pytest.raises(ConfigError, match="mystery"):
        parse_config_text(text)


def test_bad_type_rejected():
    text = default_config_text().replace("height = 32", "height = tall")
    with pytest.raises(ConfigError, match="height"):
        parse_config_text(text)


@pytest.mark.parametrize(
    "old,new,match",
    [
        ("height = 32", "height = 33", "even"),
        ("vessel_k_max = 0.16", "vessel_k_max = 0.5", "0.35"),
        ("sample_steps = 20", "sample_steps = 500", "sample_steps"),
        ("max_shift = 4", "max_shift = 30", "decodable"),
        ("n_phantoms = 16", "n_phantoms = 1", "phantoms"),
        ("beta_start = 5e-4", "beta_start = 0.0", "schedule"),
        ("n_few = 5", "n_few = 1", "n_few"),
        ("metrics = ssim,psnr,mae", "metrics = ssim,fid", "metrics"),
    ],
)
def test_validation_failures(old, new, match):
    with pytest.raises(ConfigError, match=match):
        parse_config_text(default_config_text().replace(old, new))


def test_override_seeds():
    cfg = parse_config_text(default_config_text())
    out = override_seeds(cfg, 9000)
    assert (out.seeds.phantom, out.seeds.train, out.seeds.sample) == (9000, 9001, 9002)
    assert out.phantom == cfg.phantom


def test_config_hash_is_stable():
    text = default_config_text()
    assert config_hash(text) == config_hash(text)
    assert config_hash(text) != config_hash(text + "\n# comment")
