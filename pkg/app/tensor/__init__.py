"""Dense tensor engine with reverse-mode differentiation."""

from app.tensor.gradcheck import GradcheckReport, gradcheck
from app.tensor.tensor import DEFAULT_DTYPE, Tensor, backward, is_grad_enabled, no_grad

__all__ = [
    "DEFAULT_DTYPE",
    "GradcheckReport",
    "Tensor",
    "backward",
    "gradcheck",
    "is_grad_enabled",
    "no_grad",
]
