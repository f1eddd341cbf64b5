"""Exception types shared across the toolkit.

The CLI maps these onto exit codes (config errors -> 2, numerical
failures -> 3, I/O errors -> 4), so raise the most specific one.
"""


class SpeckleflowError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(SpeckleflowError):
    """Invalid, incomplete, or inconsistent run configuration."""


class NumericalError(SpeckleflowError):
    """Non-finite values or numerically impossible state."""


class TrainingDivergedError(NumericalError):
    """Training loss blew up; carries the loss trace up to the abort."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = list(trace)


class PipelineStageError(SpeckleflowError):
    """A pipeline stage failed; partial outputs are left on disk."""

    def __init__(self, stage, cause):
        super().__init__(f"pipeline stage '{stage}' failed: {cause}")
        self.stage = stage
