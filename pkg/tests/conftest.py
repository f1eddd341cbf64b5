import pytest

from speckleflow.config import default_config_text


def scaled_config_text(
    n_phantoms=8,
    seed=100,
    n_frames=60,
    train_steps=150,
    sample_steps=5,
    timesteps=200,
):
    """Default config scaled down for fast end-to-end tests."""
    text = default_config_text(n_phantoms=n_phantoms, seed=seed)
    text = text.replace("n_frames = 200", f"n_frames = {n_frames}")
    text = text.replace("train_steps = 3000", f"train_steps = {train_steps}")
    text = text.replace("sample_steps = 20", f"sample_steps = {sample_steps}")
    text = text.replace("timesteps = 200", f"timesteps = {timesteps}")
    return text


@pytest.fixture
def tiny_config_text():
    return scaled_config_text(n_phantoms=4, n_frames=40, train_steps=60, sample_steps=4)
