"""Frequency prompt pair exchanged between the encoders, the diffusion generator and the restorer."""

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterator, Tuple

from app.core.exceptions import DimensionError
from app.tensor import Tensor, ops


class PromptKind(str, Enum):
    """Frequency band a prompt describes."""
    LOW_FREQ = "low_freq"
    HIGH_FREQ = "high_freq"


@dataclass(frozen=True)
class FrequencyPromptPair:
    """(P^l, P^h), each an n_p×d_p token matrix."""
    low: Tensor
    high: Tensor

    def __post_init__(self) -> None:
        for prompt in (self.low, self.high):
            if prompt.ndim != 2:
                raise DimensionError(f"prompt must be an n_p×d_p matrix, got shape {prompt.shape}")
        if self.low.shape != self.high.shape:
            raise DimensionError.mismatch("FrequencyPromptPair", self.low.shape, self.high.shape)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.low.shape

    def __iter__(self) -> Iterator[Tensor]:
        yield self.low
        yield self.high

    def items(self) -> Iterator[Tuple[PromptKind, Tensor]]:
        yield PromptKind.LOW_FREQ, self.low
        yield PromptKind.HIGH_FREQ, self.high

    def map(self, fn: Callable[[Tensor], Tensor]) -> "FrequencyPromptPair":
        return FrequencyPromptPair(low=fn(self.low), high=fn(self.high))

    def detach(self) -> "FrequencyPromptPair":
        return self.map(lambda p: p.detach())

    def tokens(self) -> Tensor:
        """Both prompts stacked along the token axis, 2n_p×d_p."""
        return ops.concat([self.low, self.high], axis=0)
