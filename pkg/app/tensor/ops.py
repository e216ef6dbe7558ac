"""Differentiable operations.

Every public function takes ``Tensor`` operands (plain numbers and arrays are
accepted as constants and adopt the dtype of the tensor operand) and returns a
new ``Tensor``. Backward closures capture only what they need from the forward
pass. Reductions run in a fixed order, so results are bitwise reproducible.
"""

import math
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from app.core.exceptions import DimensionError
from app.tensor.tensor import Tensor, make_result

# tanh approximation of GELU: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
GELU_COEFF = math.sqrt(2.0 / math.pi)  # 0.7978845608...
GELU_CUBIC = 0.044715
LEAKY_SLOPE = 0.2

Operand = Union[Tensor, np.ndarray, float, int]
Axis = Union[None, int, Tuple[int, ...]]


def as_tensor(value: Operand, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype))


def _pair(a: Operand, b: Operand) -> Tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError.mismatch(op, a.shape, b.shape) from None


# elementwise arithmetic

def add(a: Operand, b: Operand) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_check("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), "add", backward)


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_check("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), "sub", backward)


def mul(a: Operand, b: Operand) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_check("mul", a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result(a.data * b.data, (a, b), "mul", backward)


def div(a: Operand, b: Operand) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_check("div", a, b)
    out = a.data / b.data

    def backward(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return make_result(out, (a, b), "div", backward)


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, (a,), "neg", lambda g: (-g,))


def scale(a: Tensor, factor: float) -> Tensor:
    factor = np.asarray(factor, dtype=a.dtype)
    return make_result(a.data * factor, (a,), "scale", lambda g: (g * factor,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return make_result(out, (a,), "sqrt", lambda g: (g * 0.5 / out,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_result(out, (a,), "exp", lambda g: (g * out,))


def absolute(a: Tensor) -> Tensor:
    return make_result(np.abs(a.data), (a,), "abs", lambda g: (g * np.sign(a.data),))


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    v = x.data
    inner = GELU_COEFF * (v + GELU_CUBIC * v ** 3)
    t = np.tanh(inner)
    out = 0.5 * v * (1.0 + t)

    def backward(g):
        d_inner = GELU_COEFF * (1.0 + 3.0 * GELU_CUBIC * v ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t ** 2) * d_inner),)

    return make_result(out.astype(v.dtype, copy=False), (x,), "gelu", backward)


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    positive = x.data > 0
    slope = np.asarray(slope, dtype=x.dtype)
    out = np.where(positive, x.data, x.data * slope)
    return make_result(out, (x,), "leaky_relu", lambda g: (np.where(positive, g, g * slope),))


def elementwise(kind: str, a: Tensor, b: Optional[Operand] = None) -> Tensor:
    """Dispatch by name: add, mul, gelu, leaky_relu, scale."""
    if kind == "add":
        return add(a, b)
    if kind == "mul":
        return mul(a, b)
    if kind == "gelu":
        return gelu(a)
    if kind == "leaky_relu":
        return leaky_relu(a)
    if kind == "scale":
        return scale(a, float(b))
    raise ValueError(f"unknown elementwise kind {kind!r}")


# reductions and shape manipulation

def _normalize_axis(axis: Axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(a: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _normalize_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return make_result(np.asarray(out, dtype=a.dtype), (a,), "sum", backward)


def mean(a: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axis(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes]))
    return scale(sum(a, axis=axes, keepdims=keepdims), 1.0 / count)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError.mismatch("reshape", a.shape, shape) from None
    return make_result(out, (a,), "reshape", lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return make_result(a.data.transpose(axes), (a,), "transpose", lambda g: (g.transpose(inverse),))


def swap_last(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def getitem(a: Tensor, index) -> Tensor:
    """Basic (slice/integer) indexing."""
    out = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] += g
        return (full,)

    return make_result(np.array(out, copy=True), (a,), "getitem", backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError.mismatch("concat", *[t.shape for t in tensors]) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(out, tensors, "concat", backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError.mismatch("stack", *[t.shape for t in tensors]) from None

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return make_result(out, tensors, "stack", backward)


# linear algebra and normalization

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError.mismatch("matmul", a.shape, b.shape)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError.mismatch("matmul", a.shape, b.shape) from None

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_result(out, (a, b), "matmul", backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (x,), "softmax", backward)


def standardize(x: Tensor, axis: int = 0, eps: float = 1e-5) -> Tensor:
    """(x - mean) / sqrt(var + eps) along one axis, population variance."""
    centered = x.data - x.data.mean(axis=axis, keepdims=True)
    var = (centered * centered).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    out = centered * inv

    def backward(g):
        g_mean = g.mean(axis=axis, keepdims=True)
        gy_mean = (g * out).mean(axis=axis, keepdims=True)
        return (inv * (g - g_mean - out * gy_mean),)

    return make_result(out, (x,), "standardize", backward)


def _along(param: Tensor, axis: int, ndim: int) -> Tensor:
    shape = [1] * ndim
    shape[axis] = param.size
    return reshape(param, shape)


def layer_norm(
    x: Tensor,
    gain: Optional[Tensor] = None,
    bias: Optional[Tensor] = None,
    axis: int = 0,
    eps: float = 1e-5,
) -> Tensor:
    """
    Normalize every slice along ``axis`` (channels of C×H×W by default).

    Args:
        x: Input tensor
        gain: Per-feature gain of length x.shape[axis], or None
        bias: Per-feature bias of length x.shape[axis], or None
        axis: Feature axis
        eps: Variance floor

    Returns:
        Normalized tensor of the same shape
    """
    axis = axis % x.ndim
    for param in (gain, bias):
        if param is not None and param.size != x.shape[axis]:
            raise DimensionError.mismatch("layer_norm", x.shape, param.shape)
    out = standardize(x, axis=axis, eps=eps)
    if gain is not None:
        out = mul(out, _along(gain, axis, x.ndim))
    if bias is not None:
        out = add(out, _along(bias, axis, x.ndim))
    return out


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """x / max(||x||, eps) along ``axis``."""
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    denom = np.maximum(norm, np.asarray(eps, dtype=x.dtype))
    out = x.data / denom
    active = norm > eps

    def backward(g):
        projected = g - out * (g * out).sum(axis=axis, keepdims=True)
        return (np.where(active, projected, g) / denom,)

    return make_result(out, (x,), "l2_normalize", backward)


# convolution and pooling on C×H×W feature maps

def _require_chw(op: str, x: Tensor) -> None:
    if x.ndim != 3:
        raise DimensionError(f"{op}: expected a C×H×W tensor, got shape {x.shape}")


def _add_channel_bias(op: str, out: np.ndarray, b: Optional[Tensor]) -> np.ndarray:
    if b is None:
        return out
    if b.shape != (out.shape[0],):
        raise DimensionError.mismatch(op, out.shape, b.shape)
    return out + b.data[:, None, None]


def conv1x1(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Per-pixel linear map across channels: w is C_out×C."""
    _require_chw("conv1x1", x)
    if w.ndim != 2 or w.shape[1] != x.shape[0]:
        raise DimensionError.mismatch("conv1x1", x.shape, w.shape)
    out = _add_channel_bias("conv1x1", np.tensordot(w.data, x.data, axes=(1, 0)), b)

    def backward(g):
        gx = np.tensordot(w.data.T, g, axes=(1, 0))
        gw = np.tensordot(g, x.data, axes=([1, 2], [1, 2]))
        gb = g.sum(axis=(1, 2)) if b is not None else None
        return gx, gw, gb

    inputs = (x, w) if b is None else (x, w, b)
    return make_result(out, inputs, "conv1x1", backward)


def dwconv3x3(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Depth-wise 3×3 correlation, zero padding 1, one kernel per channel."""
    _require_chw("dwconv3x3", x)
    channels, height, width = x.shape
    if w.shape != (channels, 3, 3):
        raise DimensionError.mismatch("dwconv3x3", x.shape, w.shape)
    padded = np.pad(x.data, ((0, 0), (1, 1), (1, 1)))
    out = np.zeros_like(x.data)
    for i in range(3):
        for j in range(3):
            out += w.data[:, i, j, None, None] * padded[:, i:i + height, j:j + width]
    out = _add_channel_bias("dwconv3x3", out, b)

    def backward(g):
        g_padded = np.zeros_like(padded)
        gw = np.zeros_like(w.data)
        for i in range(3):
            for j in range(3):
                g_padded[:, i:i + height, j:j + width] += w.data[:, i, j, None, None] * g
                gw[:, i, j] = (g * padded[:, i:i + height, j:j + width]).sum(axis=(1, 2))
        gb = g.sum(axis=(1, 2)) if b is not None else None
        return g_padded[:, 1:-1, 1:-1], gw, gb

    inputs = (x, w) if b is None else (x, w, b)
    return make_result(out, inputs, "dwconv3x3", backward)


def conv2d(
    x: Tensor,
    w: Tensor,
    b: Optional[Tensor] = None,
    stride: int = 1,
    padding: Optional[int] = None,
) -> Tensor:
    """Dense k×k correlation with zero padding (default k // 2); w is C_out×C×k×k."""
    _require_chw("conv2d", x)
    if w.ndim != 4 or w.shape[1] != x.shape[0] or w.shape[2] != w.shape[3]:
        raise DimensionError.mismatch("conv2d", x.shape, w.shape)
    k = w.shape[2]
    pad = k // 2 if padding is None else padding
    _, height, width = x.shape
    out_h = (height + 2 * pad - k) // stride + 1
    out_w = (width + 2 * pad - k) // stride + 1
    if out_h < 1 or out_w < 1:
        raise DimensionError.mismatch("conv2d", x.shape, w.shape)

    padded = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(padded, (k, k), axis=(1, 2))[:, ::stride, ::stride][:, :out_h, :out_w]
    out = _add_channel_bias("conv2d", np.tensordot(w.data, windows, axes=([1, 2, 3], [0, 3, 4])), b)

    def backward(g):
        gw = np.tensordot(g, windows, axes=([1, 2], [1, 2]))
        g_padded = np.zeros_like(padded)
        row_end = stride * (out_h - 1) + 1
        col_end = stride * (out_w - 1) + 1
        for i in range(k):
            for j in range(k):
                contribution = np.tensordot(w.data[:, :, i, j], g, axes=(0, 0))
                g_padded[:, i:i + row_end:stride, j:j + col_end:stride] += contribution
        gx = g_padded[:, pad:pad + height, pad:pad + width]
        gb = g.sum(axis=(1, 2)) if b is not None else None
        return gx, gw, gb

    inputs = (x, w) if b is None else (x, w, b)
    return make_result(out, inputs, "conv2d", backward)


def _pool_matrix(size: int, target: int, dtype) -> np.ndarray:
    matrix = np.zeros((target, size), dtype=dtype)
    for i in range(target):
        start = (i * size) // target
        end = -((-(i + 1) * size) // target)  # ceil
        matrix[i, start:end] = 1.0 / (end - start)
    return matrix


def adaptive_avg_pool(x: Tensor, target: Tuple[int, int]) -> Tensor:
    """
    Average C×H×W over a target grid.

    Output cell (i, j) averages rows floor(i·H/h)..ceil((i+1)·H/h)-1 and the
    matching columns. Regions are rectangles with uniform weights, so the pool
    factorizes into a row matrix and a column matrix.
    """
    _require_chw("adaptive_avg_pool", x)
    _, height, width = x.shape
    rows, cols = target
    if not (1 <= rows <= height and 1 <= cols <= width):
        raise DimensionError(f"adaptive_avg_pool: invalid target {tuple(target)} for input {x.shape}")
    pool_rows = _pool_matrix(height, rows, x.dtype)
    pool_cols = _pool_matrix(width, cols, x.dtype)
    out = np.matmul(np.matmul(pool_rows, x.data), pool_cols.T)

    def backward(g):
        return (np.matmul(np.matmul(pool_rows.T, g), pool_cols),)

    return make_result(out, (x,), "adaptive_avg_pool", backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """C×H×W → C."""
    _require_chw("global_avg_pool", x)
    return mean(x, axis=(1, 2))


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    _require_chw("upsample_nearest", x)
    channels, height, width = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=1), factor, axis=2)

    def backward(g):
        return (g.reshape(channels, height, factor, width, factor).sum(axis=(2, 4)),)

    return make_result(out, (x,), "upsample_nearest", backward)


# losses

def l1_loss(prediction: Tensor, target: Operand) -> Tensor:
    """Mean absolute error."""
    return mean(absolute(sub(prediction, target)))


def mse_loss(prediction: Tensor, target: Operand) -> Tensor:
    """Mean squared error."""
    diff = sub(prediction, target)
    return mean(mul(diff, diff))


def mean_of(losses: List[Tensor]) -> Tensor:
    """Average scalar losses in list order."""
    total = losses[0]
    for loss in losses[1:]:
        total = add(total, loss)
    return scale(total, 1.0 / len(losses))
