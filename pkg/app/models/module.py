"""Parameter containers and basic layers."""

from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import CheckpointError
from app.tensor import DEFAULT_DTYPE, Tensor, ops


def uniform_fan_in(rng: np.random.Generator, shape: Sequence[int], fan_in: int) -> Tensor:
    """Weights drawn from U(-sqrt(1/fan_in), sqrt(1/fan_in))."""
    bound = float(np.sqrt(1.0 / fan_in))
    data = rng.uniform(-bound, bound, size=tuple(shape)).astype(DEFAULT_DTYPE)
    return Tensor(data, requires_grad=True)


def zeros(shape: Sequence[int]) -> Tensor:
    return Tensor(np.zeros(tuple(shape), dtype=DEFAULT_DTYPE), requires_grad=True)


def ones(shape: Sequence[int]) -> Tensor:
    return Tensor(np.ones(tuple(shape), dtype=DEFAULT_DTYPE), requires_grad=True)


class Module:
    """
    Base class for network components.

    Tensors and sub-modules assigned as attributes are registered in
    assignment order, which fixes the order of ``named_parameters``.
    """

    def __init__(self) -> None:
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name: str, value) -> None:
        params: Dict[str, Tensor] = self.__dict__.get("_params")
        if params is None:
            raise AttributeError("Module.__init__ must run before attributes are assigned")
        children: Dict[str, "Module"] = self.__dict__["_children"]
        params.pop(name, None)
        children.pop(name, None)
        if isinstance(value, Tensor):
            params[name] = value
        elif isinstance(value, Module):
            children[name] = value
        object.__setattr__(self, name, value)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, tensor in self._params.items():
            yield f"{prefix}{name}", tensor
        for name, child in self._children.items():
            yield from child.named_parameters(prefix=f"{prefix}{name}.")

    def parameters(self) -> List[Tensor]:
        return [t for _, t in self.named_parameters()]

    def trainable(self, prefix: str = "") -> Dict[str, Tensor]:
        return {n: t for n, t in self.named_parameters(prefix) if t.requires_grad}

    def num_parameters(self) -> int:
        return sum(t.size for t in self.parameters())

    def zero_grad(self) -> None:
        for tensor in self.parameters():
            tensor.grad = None

    def requires_grad_(self, flag: bool = True) -> "Module":
        for tensor in self.parameters():
            tensor.requires_grad = flag
        return self

    def state_dict(self, prefix: str = "") -> Dict[str, np.ndarray]:
        return {name: tensor.data for name, tensor in self.named_parameters(prefix)}

    def load_state_dict(self, state: Dict[str, np.ndarray], prefix: str = "", strict: bool = True) -> None:
        """
        Copy arrays into the registered parameters.

        Args:
            state: Mapping of parameter name to array
            prefix: Prefix of this module's names inside ``state``
            strict: Reject missing or unexpected names

        Raises:
            CheckpointError: On missing names, unexpected names or shape mismatch
        """
        own = dict(self.named_parameters(prefix))
        missing = [name for name in own if name not in state]
        if strict:
            unexpected = [name for name in state if name.startswith(prefix) and name not in own]
            if missing or unexpected:
                raise CheckpointError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, tensor in own.items():
            if name not in state:
                continue
            array = np.asarray(state[name])
            if array.shape != tensor.shape:
                raise CheckpointError(f"{name}: expected shape {tensor.shape}, got {array.shape}")
            tensor.data = array.astype(tensor.dtype, copy=True)


class ModuleList(Module):
    """Ordered container of sub-modules."""

    def __init__(self, modules: Optional[Iterable[Module]] = None):
        super().__init__()
        object.__setattr__(self, "_items", [])
        for module in modules or ():
            self.append(module)

    def append(self, module: Module) -> None:
        setattr(self, str(len(self._items)), module)
        self._items.append(module)

    def __iter__(self) -> Iterator[Module]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, index: int) -> Module:
        return self._items[index]


class Linear(Module):
    """y = x W + b on row vectors; W is in_features × out_features."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 bias: bool = True, zero_init: bool = False):
        super().__init__()
        if zero_init:
            self.weight = zeros((in_features, out_features))
        else:
            self.weight = uniform_fan_in(rng, (in_features, out_features), in_features)
        self.bias = zeros((out_features,)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        out = ops.matmul(x, self.weight)
        return out if self.bias is None else ops.add(out, self.bias)


class Conv1x1(Module):
    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        super().__init__()
        self.weight = uniform_fan_in(rng, (out_channels, in_channels), in_channels)
        self.bias = zeros((out_channels,))

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv1x1(x, self.weight, self.bias)


class DepthwiseConv3x3(Module):
    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        self.weight = uniform_fan_in(rng, (channels, 3, 3), 9)
        self.bias = zeros((channels,))

    def forward(self, x: Tensor) -> Tensor:
        return ops.dwconv3x3(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator,
                 kernel_size: int = 3, stride: int = 1, zero_init: bool = False):
        super().__init__()
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = zeros(shape) if zero_init else uniform_fan_in(rng, shape, fan_in)
        self.bias = zeros((out_channels,))
        self.stride = stride

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride)


class LayerNorm(Module):
    """Normalization over one axis with learnable gain and bias."""

    def __init__(self, features: int, axis: int = 0, eps: float = 1e-5):
        super().__init__()
        self.weight = ones((features,))
        self.bias = zeros((features,))
        self.axis = axis
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.weight, self.bias, axis=self.axis, eps=self.eps)
