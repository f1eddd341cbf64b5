"""speckleflow: laser-speckle flow imaging toolkit.

Two-stage pipeline on synthetic speckle phantoms with known ground truth:
phase-correlation stabilization plus a temporal-contrast flow prior,
followed by a conditional diffusion reconstructor that recovers a
multiframe-quality flow map from a few aligned frames.

Submodules are imported lazily so the CLI can configure threading
environment variables before numpy is loaded.
"""

import importlib

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    NumericalError,
    PipelineStageError,
    SpeckleflowError,
    TrainingDivergedError,
)

_SUBMODULES = (
    "contrast",
    "config",
    "diffusion",
    "metrics",
    "phantom",
    "pipeline",
    "register",
    "tensorfile",
)

__all__ = [
    "ConfigError",
    "NumericalError",
    "PipelineStageError",
    "SpeckleflowError",
    "TrainingDivergedError",
    *_SUBMODULES,
]


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
