"""Dense tensor with eager reverse-mode differentiation.

Every operation executed on tensors that require gradients records a ``Node``
holding its inputs and a closure mapping the output gradient to input
gradients. Nodes carry a global creation sequence number, so the recorded
graph is topologically ordered by construction and ``backward`` simply walks
the reachable nodes in reverse creation order.
"""

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.exceptions import DimensionError, GradientError

DEFAULT_DTYPE = np.float32

ArrayLike = Union[np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_sequence = itertools.count()
_grad_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording on the current thread."""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


class Node:
    """One recorded operation."""

    __slots__ = ("op", "inputs", "backward_fn", "seq")

    def __init__(self, op: str, inputs: Tuple["Tensor", ...], backward_fn: BackwardFn):
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.seq = next(_sequence)

    def __repr__(self) -> str:
        return f"Node(op={self.op!r}, seq={self.seq})"


def _as_array(data: ArrayLike) -> np.ndarray:
    array = np.asarray(data)
    if array.dtype != np.float32 and array.dtype != np.float64:
        array = array.astype(DEFAULT_DTYPE)
    return array


class Tensor:
    """N-dimensional real array with optional gradient tracking."""

    __array_priority__ = 100

    __slots__ = ("data", "requires_grad", "grad", "node", "name")

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
    ):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[Node] = None
        self.name = name

    # metadata

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __len__(self) -> int:
        return self.shape[0]

    # operator sugar, implementations live in app.tensor.ops

    def __add__(self, other):
        from app.tensor import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from app.tensor import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from app.tensor import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from app.tensor import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from app.tensor import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from app.tensor import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from app.tensor import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from app.tensor import ops
        return ops.div(other, self)

    def __neg__(self):
        from app.tensor import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from app.tensor import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from app.tensor import ops
        return ops.getitem(self, index)

    def reshape(self, *shape) -> "Tensor":
        from app.tensor import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        from app.tensor import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    @property
    def T(self) -> "Tensor":
        from app.tensor import ops
        return ops.transpose(self, None)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        from app.tensor import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        from app.tensor import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def backward(self) -> None:
        backward(self)


def make_result(
    data: np.ndarray,
    inputs: Sequence[Tensor],
    op: str,
    backward_fn: BackwardFn,
) -> Tensor:
    """Wrap an op result, recording a node when any input needs a gradient."""
    track = is_grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        out.node = Node(op, tuple(inputs), backward_fn)
    return out


def _collect(root: Tensor) -> List[Tensor]:
    seen = set()
    found: List[Tensor] = []
    stack = [root]
    while stack:
        tensor = stack.pop()
        if id(tensor) in seen or tensor.node is None:
            continue
        seen.add(id(tensor))
        found.append(tensor)
        stack.extend(t for t in tensor.node.inputs if t.requires_grad)
    found.sort(key=lambda t: t.node.seq, reverse=True)
    return found


def backward(loss: Tensor) -> None:
    """
    Propagate d(loss)/d(x) into ``.grad`` of every reachable leaf that requires it.

    Gradients accumulate into existing ``.grad`` arrays, so a leaf used by
    several nodes (or across several backward calls) receives the sum.

    Args:
        loss: Scalar tensor produced by recorded operations

    Raises:
        GradientError: If the loss is not a scalar
    """
    if loss.size != 1:
        raise GradientError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    if loss.node is None:
        seed = np.ones_like(loss.data)
        loss.grad = seed if loss.grad is None else loss.grad + seed
        return

    pending: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for tensor in _collect(loss):
        grad = pending.pop(id(tensor), None)
        if grad is None:
            continue
        input_grads = tensor.node.backward_fn(grad)
        for parent, parent_grad in zip(tensor.node.inputs, input_grads):
            if parent_grad is None or not parent.requires_grad:
                continue
            parent_grad = np.asarray(parent_grad, dtype=parent.dtype).reshape(parent.shape)
            if parent.node is None:
                parent.grad = parent_grad.copy() if parent.grad is None else parent.grad + parent_grad
            elif id(parent) in pending:
                pending[id(parent)] = pending[id(parent)] + parent_grad
            else:
                pending[id(parent)] = parent_grad
