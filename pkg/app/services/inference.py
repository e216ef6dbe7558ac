"""Inference and evaluation service module."""

import logging
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from app.core.exceptions import DimensionError
from app.models.pipeline import ReflectionModel
from app.schemas.inference import EvaluationReport, InferenceResult, QualityMetrics
from app.services.checkpoint import load_model
from app.services.data import load_pairs
from app.services.imageio import PathLike, read_image, write_image
from app.services.metrics import quality
from app.tensor import Tensor, no_grad

logger = logging.getLogger(__name__)


def padded_size(size: int, multiple: int, minimum: int) -> int:
    """Smallest value ≥ max(size, minimum) divisible by ``multiple``."""
    target = max(size, minimum)
    return -(-target // multiple) * multiple


def pad_image(image: Tensor, multiple: int, minimum: int = 0) -> Tuple[Tensor, Tuple[int, int]]:
    """
    Pad bottom and right so both sides are divisible by ``multiple`` and at least ``minimum``.

    Reflect padding is used where the image is large enough, edge replication otherwise.

    Returns:
        (padded image, original (height, width))
    """
    if image.ndim != 3:
        raise DimensionError(f"expected a C×H×W image, got shape {image.shape}")
    _, height, width = image.shape
    pad_h = padded_size(height, multiple, minimum) - height
    pad_w = padded_size(width, multiple, minimum) - width
    if not pad_h and not pad_w:
        return image, (height, width)
    mode = "reflect" if pad_h < height and pad_w < width else "edge"
    data = np.pad(image.data, ((0, 0), (0, pad_h), (0, pad_w)), mode=mode)
    return Tensor(data), (height, width)


def crop_image(image: Tensor, size: Tuple[int, int]) -> Tensor:
    height, width = size
    return Tensor(image.data[:, :height, :width].copy())


def restore_image(model: ReflectionModel, image: Tensor, seed: int) -> Tensor:
    """
    Restore one image of any size.

    Args:
        model: Trained model
        image: 3×H×W input in [0, 1]
        seed: Seed of the prompt sampler

    Returns:
        3×H×W restored image (not clamped)
    """
    padded, size = pad_image(image, model.size_multiple, model.min_size)
    with no_grad():
        restored = model.restore(padded, seed)
    return crop_image(restored, size)


def infer(
    input_path: PathLike,
    checkpoint: PathLike,
    seed: int,
    out_path: Optional[PathLike] = None,
    gt_path: Optional[PathLike] = None,
    model: Optional[ReflectionModel] = None,
) -> InferenceResult:
    """
    Restore an image file with a trained checkpoint.

    Args:
        input_path: Contaminated image
        checkpoint: Checkpoint file, ignored when ``model`` is given
        seed: Seed of the prompt sampler
        out_path: Where to write the restored image
        gt_path: Optional ground truth; PSNR/SSIM are reported when given
        model: Already loaded model

    Returns:
        InferenceResult with the output path and metrics

    Raises:
        ImageFormatError: If an image cannot be read
        CheckpointError: If the checkpoint cannot be loaded
    """
    if model is None:
        model, _ = load_model(checkpoint)
    image = read_image(input_path)
    restored = restore_image(model, image, seed)
    _, height, width = image.shape
    result = InferenceResult(seed=seed, height=height, width=width)
    if out_path is not None:
        result.output_path = str(write_image(out_path, restored))
    if gt_path is not None:
        gt = read_image(gt_path)
        # metrics on the clamped output, as written to disk
        clamped = Tensor(np.clip(restored.data, 0.0, 1.0))
        result.metrics = quality(clamped, gt)
        result.input_metrics = quality(image, gt)
        logger.info(
            "PSNR %.4f dB (input %.4f dB) SSIM %.4f (input %.4f)",
            result.metrics.psnr, result.input_metrics.psnr, result.metrics.ssim, result.input_metrics.ssim,
        )
    return result


def _mean(metrics: List[QualityMetrics]) -> QualityMetrics:
    return QualityMetrics(
        psnr=float(np.mean([m.psnr for m in metrics])),
        ssim=float(np.mean([m.ssim for m in metrics])),
    )


def evaluate(
    pairs_dir: PathLike,
    checkpoint: Optional[PathLike],
    seed: int,
    model: Optional[ReflectionModel] = None,
    limit: Optional[int] = None,
) -> EvaluationReport:
    """
    Mean PSNR/SSIM of inputs and restorations over a pairs directory.

    Every pair is restored with the same seed.
    """
    if model is None:
        model, _ = load_model(Path(checkpoint))
    pairs = load_pairs(pairs_dir, limit=limit)
    before, after = [], []
    for pair in pairs:
        restored = restore_image(model, pair.input_q, seed)
        restored = Tensor(np.clip(restored.data, 0.0, 1.0))
        before.append(quality(pair.input_q, pair.gt_b))
        after.append(quality(restored, pair.gt_b))
    report = EvaluationReport(pairs=len(pairs), input=_mean(before), restored=_mean(after))
    logger.info("evaluated %d pairs: PSNR %.4f -> %.4f dB", report.pairs, report.input.psnr, report.restored.psnr)
    return report
