"""Exception hierarchy shared by the engine, services and interfaces."""

from typing import Optional, Sequence


class ReflectionError(Exception):
    """Base class for all domain errors."""


class DimensionError(ReflectionError, ValueError):
    """Tensor shapes or image dimensions violate an operation's contract."""

    @classmethod
    def mismatch(cls, op: str, *shapes: Sequence[int]) -> "DimensionError":
        rendered = " vs ".join(str(tuple(s)) for s in shapes)
        return cls(f"{op}: incompatible shapes {rendered}")


class GradientError(ReflectionError):
    """Backward pass requested on something that is not a scalar loss."""


class ImageFormatError(ReflectionError):
    """Malformed or unsupported image file."""


class CheckpointError(ReflectionError):
    """Checkpoint cannot be read or does not match the requested model."""


class DatasetError(ReflectionError):
    """Training or evaluation data is missing or inconsistent."""


class ConfigError(ReflectionError):
    """Configuration file cannot be read or validated."""


class TrainingDivergedError(ReflectionError):
    """A loss component became NaN or infinite."""

    def __init__(self, stage: str, step: int, components: dict, detail: Optional[str] = None):
        self.stage = stage
        self.step = step
        self.components = components
        parts = ", ".join(f"{k}={v!r}" for k, v in components.items())
        message = f"non-finite loss in stage '{stage}' at step {step}: {parts}"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)
