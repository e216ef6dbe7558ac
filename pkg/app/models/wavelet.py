"""Single-level orthonormal Haar transform on C×H×W tensors.

For every 2×2 block [a b; c d]:

    ll = (a + b + c + d) / 2      lh = (a - b + c - d) / 2
    hl = (a + b - c - d) / 2      hh = (a - b - c + d) / 2

The transform is built from differentiable slicing and arithmetic, so
gradients flow through it without a dedicated backward rule.
"""

from dataclasses import dataclass
from typing import Tuple

from app.core.exceptions import DimensionError
from app.tensor import Tensor, ops


@dataclass(frozen=True)
class WaveletBands:
    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor

    def __post_init__(self) -> None:
        shapes = {self.ll.shape, self.lh.shape, self.hl.shape, self.hh.shape}
        if len(shapes) != 1:
            raise DimensionError(f"wavelet bands must share one shape, got {sorted(shapes)}")

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.ll.shape

    @property
    def high(self) -> Tensor:
        return ops.concat([self.lh, self.hl, self.hh], axis=0)


def _half(x: Tensor) -> Tensor:
    return ops.scale(x, 0.5)


def wt(x: Tensor) -> WaveletBands:
    """Forward transform; H and W must be even."""
    if x.ndim != 3:
        raise DimensionError(f"wt: expected a C×H×W tensor, got shape {x.shape}")
    _, height, width = x.shape
    if height % 2 or width % 2:
        raise DimensionError(f"wt: height and width must be even, got {height}×{width}")
    a = x[:, 0::2, 0::2]
    b = x[:, 0::2, 1::2]
    c = x[:, 1::2, 0::2]
    d = x[:, 1::2, 1::2]
    return WaveletBands(
        ll=_half(a + b + c + d),
        lh=_half(a - b + c - d),
        hl=_half(a + b - c - d),
        hh=_half(a - b - c + d),
    )


def iwt(bands: WaveletBands) -> Tensor:
    """Inverse transform, exact inverse of ``wt``."""
    ll, lh, hl, hh = bands.ll, bands.lh, bands.hl, bands.hh
    if ll.ndim != 3:
        raise DimensionError(f"iwt: expected C×h×w bands, got shape {ll.shape}")
    channels, height, width = ll.shape
    a = _half(ll + lh + hl + hh)
    b = _half(ll - lh + hl - hh)
    c = _half(ll + lh - hl - hh)
    d = _half(ll - lh - hl + hh)
    top = ops.stack([a, b], axis=-1)      # C×h×w×2
    bottom = ops.stack([c, d], axis=-1)
    blocks = ops.stack([top, bottom], axis=2)  # C×h×2×w×2
    return blocks.reshape(channels, 2 * height, 2 * width)


def split_freq(x: Tensor) -> Tuple[Tensor, Tensor]:
    """
    Low- and high-frequency images of ``x``.

    Returns:
        (lf, hf): lf is the ll band (C×H/2×W/2), hf stacks lh, hl, hh (3C×H/2×W/2)
    """
    bands = wt(x)
    return bands.ll, bands.high


def merge_freq(lf: Tensor, hf: Tensor) -> Tensor:
    """Inverse of ``split_freq``."""
    channels = lf.shape[0]
    if hf.shape[0] != 3 * channels or hf.shape[1:] != lf.shape[1:]:
        raise DimensionError.mismatch("merge_freq", lf.shape, hf.shape)
    return iwt(WaveletBands(
        ll=lf,
        lh=hf[:channels],
        hl=hf[channels:2 * channels],
        hh=hf[2 * channels:],
    ))
