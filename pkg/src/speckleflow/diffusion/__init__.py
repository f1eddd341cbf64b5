"""Conditional diffusion reconstructor: forward noising, noise-prediction
training of a small convolutional denoiser, and deterministic DDIM sampling
guided by aligned few-frame speckle plus the flow prior."""

from .condition import Condition, make_condition
from .denoiser import DenoiserArch, DenoiserParams, denoise_predict, init_params, n_params
from .sampling import SamplerConfig, ddim_sample, ddim_step, sample, sample_flow, uniform_sampler_config
from .schedule import NoiseSchedule, forward_noise, linear_schedule
from .training import TrainConfig, loss_and_grad, train

__all__ = [
    "Condition",
    "DenoiserArch",
    "DenoiserParams",
    "NoiseSchedule",
    "SamplerConfig",
    "TrainConfig",
    "ddim_sample",
    "ddim_step",
    "denoise_predict",
    "forward_noise",
    "init_params",
    "linear_schedule",
    "loss_and_grad",
    "make_condition",
    "n_params",
    "sample",
    "sample_flow",
    "train",
    "uniform_sampler_config",
]
