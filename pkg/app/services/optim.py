"""Adam and AdamW optimizers over named parameters."""

from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np

from app.core.exceptions import DimensionError
from app.tensor import Tensor

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class AdamState:
    """First and second moments per parameter name, plus the shared step counter."""
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = EPS


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, Optional[np.ndarray]],
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
) -> AdamState:
    """
    Apply one bias-corrected Adam update in place.

    With ``weight_decay`` > 0 the decay is decoupled from the gradient
    (AdamW): parameters shrink by lr·wd before the moment update is applied.
    Parameters whose gradient is None are left untouched.

    Args:
        params: Name → parameter tensor
        grads: Name → gradient array (same shape) or None
        state: Moments and step counter, updated in place
        lr: Learning rate
        weight_decay: Decoupled weight decay coefficient

    Returns:
        The updated state

    Raises:
        DimensionError: If a gradient's shape differs from its parameter's
    """
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        if grad.shape != param.shape:
            raise DimensionError.mismatch(f"adam_step[{name}]", param.shape, grad.shape)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.m[name] = m.astype(param.dtype, copy=False)
        state.v[name] = v.astype(param.dtype, copy=False)
        m_hat = m / correction1
        v_hat = v / correction2
        data = param.data
        if weight_decay:
            data = data * (1.0 - lr * weight_decay)
        param.data = (data - lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(param.dtype, copy=False)
    return state


class Adam:
    """Stateful wrapper around ``adam_step`` for a fixed set of named parameters."""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-4, weight_decay: float = 0.0):
        self.params = dict(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.state = AdamState()

    def step(self) -> None:
        adam_step(self.params, {n: p.grad for n, p in self.params.items()}, self.state, self.lr, self.weight_decay)

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.grad = None


class AdamW(Adam):
    """Adam with decoupled weight decay (1e-4 by default)."""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-4, weight_decay: float = 1e-4):
        super().__init__(params, lr=lr, weight_decay=weight_decay)
