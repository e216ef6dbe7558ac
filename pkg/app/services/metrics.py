"""Image quality metrics service module."""

import math
from typing import Union

import numpy as np
from skimage.metrics import structural_similarity

from app.core.exceptions import DimensionError
from app.schemas.inference import QualityMetrics
from app.tensor import Tensor

ImageLike = Union[Tensor, np.ndarray]

# ITU-R BT.601 luma weights
GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float64)
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _array(image: ImageLike) -> np.ndarray:
    data = image.data if isinstance(image, Tensor) else image
    return np.asarray(data, dtype=np.float64)


def psnr(a: ImageLike, b: ImageLike, max_val: float = 1.0) -> float:
    """
    Peak signal-to-noise ratio in dB.

    Args:
        a: Image
        b: Image of the same shape
        max_val: Peak signal value

    Returns:
        10·log10(max_val² / MSE), or ``math.inf`` when the images are identical

    Raises:
        DimensionError: If shapes differ
    """
    x, y = _array(a), _array(b)
    if x.shape != y.shape:
        raise DimensionError.mismatch("psnr", x.shape, y.shape)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val ** 2 / mse)


def to_gray(image: ImageLike) -> np.ndarray:
    """3×H×W RGB → H×W luma; 2-D input is returned as is."""
    x = _array(image)
    if x.ndim == 2:
        return x
    if x.ndim != 3 or x.shape[0] != 3:
        raise DimensionError(f"expected a 3×H×W image, got shape {x.shape}")
    return np.tensordot(GRAY_WEIGHTS, x, axes=(0, 0))


def ssim(a: ImageLike, b: ImageLike, max_val: float = 1.0) -> float:
    """
    Structural similarity of the luma channels.

    Statistics are Gaussian-weighted (11×11, σ=1.5) with population
    variances; the result is the mean SSIM map value over every window that
    fits inside the image.

    Raises:
        DimensionError: If shapes differ or the image is smaller than the window
    """
    x, y = to_gray(a), to_gray(b)
    if x.shape != y.shape:
        raise DimensionError.mismatch("ssim", x.shape, y.shape)
    if x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
        raise DimensionError(f"ssim: image {x.shape} is smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} window")
    value = structural_similarity(
        x,
        y,
        data_range=max_val,
        gaussian_weights=True,
        sigma=SSIM_SIGMA,
        use_sample_covariance=False,
        K1=SSIM_K1,
        K2=SSIM_K2,
    )
    return float(value)


def quality(restored: ImageLike, reference: ImageLike) -> QualityMetrics:
    return QualityMetrics(psnr=psnr(restored, reference), ssim=ssim(restored, reference))
