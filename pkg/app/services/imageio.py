"""Image file service module: binary PPM, and PNG when enabled."""

import io
import logging
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from app.core.config import settings
from app.core.exceptions import ImageFormatError
from app.tensor import DEFAULT_DTYPE, Tensor

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

PPM_MAGIC = b"P6"
MAX_VALUE = 255
# raised by Pillow for unreadable headers and truncated rasters
PIL_ERRORS = (UnidentifiedImageError, OSError, ValueError, SyntaxError)


def from_pixels(pixels: np.ndarray) -> np.ndarray:
    """H×W×3 uint8 to a 3×H×W float array in [0, 1]."""
    return (pixels.transpose(2, 0, 1).astype(DEFAULT_DTYPE) / MAX_VALUE).astype(DEFAULT_DTYPE)


def decode_ppm(data: bytes) -> np.ndarray:
    """
    Decode a binary 8-bit PPM into a 3×H×W float array in [0, 1].

    Raises:
        ImageFormatError: On a bad magic number, malformed header or truncated payload
    """
    if data[:2] != PPM_MAGIC:
        raise ImageFormatError(f"not a binary PPM (magic {data[:2]!r})")
    try:
        with Image.open(io.BytesIO(data), formats=["PPM"]) as img:
            # any maxval other than 255 is routed away from the raw decoder
            if img.mode != "RGB" or not img.tile or img.tile[0][0] != "raw":
                raise ImageFormatError("only 8-bit PPM is supported")
            pixels = np.asarray(img, dtype=np.uint8)
    except PIL_ERRORS as exc:
        raise ImageFormatError(f"malformed PPM: {exc}") from exc
    return from_pixels(pixels)


def to_bytes(image: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and quantize to H×W×3 uint8."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ImageFormatError(f"expected a 3×H×W image, got shape {image.shape}")
    clipped = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.ascontiguousarray(np.rint(clipped * MAX_VALUE).astype(np.uint8).transpose(1, 2, 0))


def encode_ppm(image: np.ndarray) -> bytes:
    buffer = io.BytesIO()
    Image.fromarray(to_bytes(image)).save(buffer, format="PPM")
    return buffer.getvalue()


def _png_enabled(path: Path) -> bool:
    if path.suffix.lower() != ".png":
        return False
    if not settings.ENABLE_PNG:
        raise ImageFormatError(f"{path}: PNG support is disabled (set ENABLE_PNG=true)")
    return True


def read_image(path: PathLike) -> Tensor:
    """
    Read an RGB image as a 3×H×W tensor in [0, 1].

    Args:
        path: PPM file, or PNG file when ``settings.ENABLE_PNG`` is set

    Returns:
        Tensor without gradient tracking

    Raises:
        ImageFormatError: If the file is malformed or its format is unsupported
    """
    path = Path(path)
    if _png_enabled(path):
        try:
            with Image.open(path, formats=["PNG"]) as img:
                pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
        except PIL_ERRORS as exc:
            raise ImageFormatError(f"{path}: unreadable PNG: {exc}") from exc
        return Tensor(from_pixels(pixels))
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ImageFormatError(f"cannot read {path}: {exc}") from exc
    try:
        return Tensor(decode_ppm(data))
    except ImageFormatError as exc:
        raise ImageFormatError(f"{path}: {exc}") from exc


def write_image(path: PathLike, image: Union[Tensor, np.ndarray]) -> Path:
    """
    Write a 3×H×W image, clamping values to [0, 1].

    Args:
        path: Destination; ``.png`` requires ``settings.ENABLE_PNG``
        image: Tensor or array

    Returns:
        The written path
    """
    path = Path(path)
    data = image.data if isinstance(image, Tensor) else np.asarray(image)
    path.parent.mkdir(parents=True, exist_ok=True)
    if _png_enabled(path):
        Image.fromarray(to_bytes(data)).save(path)
    else:
        path.write_bytes(encode_ppm(data))
    logger.debug("wrote %s (%d×%d)", path, data.shape[1], data.shape[2])
    return path
