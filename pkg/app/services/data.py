"""
Synthetic reflection data service module.

A contaminated image is Q = clamp(B + w·(R ∗ K), 0, 1) for a background B,
a reflection layer R and a normalised Gaussian kernel K applied with
reflect padding.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.signal import windows
from tqdm import tqdm

from app.core.config import settings
from app.core.exceptions import DatasetError, DimensionError
from app.schemas.train import SynthSpec
from app.services.imageio import PathLike, read_image, write_image
from app.tensor import DEFAULT_DTYPE, Tensor

logger = logging.getLogger(__name__)

PAIRS_DIR = "pairs"
INPUT_SUFFIX = "_input.ppm"
GT_SUFFIX = "_gt.ppm"


@dataclass
class ImagePair:
    """Contaminated input Q and clean background B, both 3×H×W in [0, 1]."""
    input_q: Tensor
    gt_b: Tensor
    reflection_r: Optional[Tensor] = None
    kernel: Optional[np.ndarray] = None
    weight: Optional[float] = None
    name: str = field(default="")

    def __post_init__(self) -> None:
        if self.input_q.shape != self.gt_b.shape:
            raise DimensionError.mismatch("ImagePair", self.input_q.shape, self.gt_b.shape)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.gt_b.shape


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    """Normalised size×size Gaussian; size 1 is the delta kernel."""
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be a positive odd number, got {size}")
    profile = windows.gaussian(size, std=sigma)
    kernel = np.outer(profile, profile)
    return kernel / kernel.sum()


def blur(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Per-channel 2-D convolution of a C×H×W array with reflect padding."""
    if image.ndim != 3:
        raise DimensionError(f"blur: expected a C×H×W array, got shape {image.shape}")
    # scipy "mirror" is numpy "reflect": the border sample is not repeated
    return ndimage.convolve(np.asarray(image, dtype=np.float64), kernel[None], mode="mirror")


def compose(b: np.ndarray, r: np.ndarray, kernel: np.ndarray, weight: float) -> np.ndarray:
    """B + w·(R ∗ K) before clamping."""
    return np.asarray(b, dtype=np.float64) + weight * blur(r, kernel)


def synthesize(b: Tensor, r: Tensor, spec: SynthSpec, rng: np.random.Generator) -> ImagePair:
    """
    Build a contaminated image from a background and a reflection layer.

    Args:
        b: Background B, 3×H×W in [0, 1]
        r: Reflection layer R, same shape
        spec: Kernel size and the σ and weight ranges
        rng: Source of σ and w

    Returns:
        ImagePair with the drawn kernel and weight recorded

    Raises:
        DimensionError: If b and r differ in shape
    """
    if b.shape != r.shape:
        raise DimensionError.mismatch("synthesize", b.shape, r.shape)
    sigma = float(rng.uniform(*spec.sigma_range))
    weight = float(rng.uniform(*spec.reflection_weight))
    kernel = gaussian_kernel(spec.kernel_size, sigma)
    q = np.clip(compose(b.data, r.data, kernel, weight), 0.0, 1.0)
    return ImagePair(
        input_q=Tensor(q.astype(DEFAULT_DTYPE)),
        gt_b=b,
        reflection_r=r,
        kernel=kernel,
        weight=weight,
    )


def procedural_image(rng: np.random.Generator, height: int, width: int) -> Tensor:
    """A smooth colour gradient overlaid with random rectangles and ellipses."""
    rows = np.linspace(0.0, 1.0, height)[:, None]
    cols = np.linspace(0.0, 1.0, width)[None, :]
    start = rng.uniform(0.0, 1.0, size=(3, 1, 1))
    d_row = rng.uniform(-0.5, 0.5, size=(3, 1, 1))
    d_col = rng.uniform(-0.5, 0.5, size=(3, 1, 1))
    image = start + d_row * rows[None] + d_col * cols[None]

    y, x = np.mgrid[0:height, 0:width]
    for _ in range(int(rng.integers(2, 6))):
        colour = rng.uniform(0.0, 1.0, size=(3, 1, 1))
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        ry = rng.uniform(height / 10, height / 3)
        rx = rng.uniform(width / 10, width / 3)
        if rng.random() < 0.5:
            mask = (np.abs(y - cy) <= ry) & (np.abs(x - cx) <= rx)
        else:
            mask = ((y - cy) / ry) ** 2 + ((x - cx) / rx) ** 2 <= 1.0
        image = np.where(mask[None], colour, image)
    return Tensor(np.clip(image, 0.0, 1.0).astype(DEFAULT_DTYPE))


def random_crop(image: Tensor, size: int, rng: np.random.Generator) -> Tensor:
    _, height, width = image.shape
    if height < size or width < size:
        raise DatasetError(f"image {height}×{width} is smaller than the {size}×{size} crop")
    top = int(rng.integers(0, height - size + 1))
    left = int(rng.integers(0, width - size + 1))
    return Tensor(image.data[:, top:top + size, left:left + size].copy())


def load_folder_images(folder: PathLike) -> List[Tensor]:
    """
    Read every PPM (and PNG when enabled) in a folder, sorted by name.

    Raises:
        DatasetError: If the folder is missing or holds no usable image
    """
    folder = Path(folder)
    if not folder.is_dir():
        raise DatasetError(f"image folder {folder} does not exist")
    suffixes = {".ppm", ".png"} if settings.ENABLE_PNG else {".ppm"}
    paths = sorted(p for p in folder.iterdir() if p.suffix.lower() in suffixes)
    if not paths:
        raise DatasetError(f"no images with suffix {sorted(suffixes)} in {folder}")
    return [read_image(p) for p in paths]


def generate_dataset(
    out_dir: PathLike,
    count: int,
    size: int,
    spec: SynthSpec,
    source_dir: Optional[PathLike] = None,
) -> Path:
    """
    Write ``count`` synthetic pairs as ``pairs/NNNN_{input,gt}.ppm``.

    Each pair draws from its own generator seeded with (spec.seed, index), so
    any pair can be regenerated independently of the others.

    Args:
        out_dir: Dataset root; pairs land in ``out_dir/pairs``
        count: Number of pairs
        size: Side length of the square images
        spec: Synthesis parameters
        source_dir: Optional folder of user images used as B and R instead of procedural ones

    Returns:
        The pairs directory
    """
    if count < 1 or size < 1:
        raise ValueError("count and size must be positive")
    pool = load_folder_images(source_dir) if source_dir is not None else None
    pairs_dir = Path(out_dir) / PAIRS_DIR
    pairs_dir.mkdir(parents=True, exist_ok=True)
    for index in tqdm(range(count), desc="synth", unit="pair"):
        rng = np.random.default_rng([spec.seed, index])
        if pool is None:
            b = procedural_image(rng, size, size)
            r = procedural_image(rng, size, size)
        else:
            b = random_crop(pool[int(rng.integers(len(pool)))], size, rng)
            r = random_crop(pool[int(rng.integers(len(pool)))], size, rng)
        pair = synthesize(b, r, spec, rng)
        write_image(pairs_dir / f"{index:04d}{INPUT_SUFFIX}", pair.input_q)
        write_image(pairs_dir / f"{index:04d}{GT_SUFFIX}", pair.gt_b)
    logger.info("wrote %d pairs of %d×%d to %s", count, size, size, pairs_dir)
    return pairs_dir


def resolve_pairs_dir(path: PathLike) -> Path:
    """Accept either a dataset root or its ``pairs`` directory."""
    path = Path(path)
    if (path / PAIRS_DIR).is_dir():
        return path / PAIRS_DIR
    return path


def load_pairs(path: PathLike, limit: Optional[int] = None) -> List[ImagePair]:
    """
    Load ``NNNN_input.ppm``/``NNNN_gt.ppm`` pairs in index order.

    Raises:
        DatasetError: If the directory is missing, empty, or a partner file is absent
    """
    pairs_dir = resolve_pairs_dir(path)
    if not pairs_dir.is_dir():
        raise DatasetError(f"dataset directory {pairs_dir} does not exist")
    inputs = sorted(pairs_dir.glob(f"*{INPUT_SUFFIX}"))
    if not inputs:
        raise DatasetError(f"no '*{INPUT_SUFFIX}' files in {pairs_dir}")
    if limit is not None:
        inputs = inputs[:limit]
    pairs = []
    for input_path in inputs:
        stem = input_path.name[: -len(INPUT_SUFFIX)]
        gt_path = pairs_dir / f"{stem}{GT_SUFFIX}"
        if not gt_path.exists():
            raise DatasetError(f"missing ground truth {gt_path.name} for {input_path.name}")
        pairs.append(ImagePair(input_q=read_image(input_path), gt_b=read_image(gt_path), name=stem))
    logger.info("loaded %d pairs from %s", len(pairs), pairs_dir)
    return pairs


def sample_batch(
    pairs: Sequence[ImagePair], batch_size: int, patch_size: int, rng: np.random.Generator
) -> List[ImagePair]:
    """Draw pairs with replacement and crop aligned patch_size×patch_size patches."""
    batch = []
    for _ in range(batch_size):
        pair = pairs[int(rng.integers(len(pairs)))]
        _, height, width = pair.shape
        if height < patch_size or width < patch_size:
            raise DatasetError(f"pair {pair.name} ({height}×{width}) is smaller than patch {patch_size}")
        top = int(rng.integers(0, height - patch_size + 1))
        left = int(rng.integers(0, width - patch_size + 1))
        window = (slice(None), slice(top, top + patch_size), slice(left, left + patch_size))
        batch.append(ImagePair(
            input_q=Tensor(pair.input_q.data[window].copy()),
            gt_b=Tensor(pair.gt_b.data[window].copy()),
            name=pair.name,
        ))
    return batch
