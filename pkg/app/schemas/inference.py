"""Inference and evaluation schemas module."""

import math
from typing import Dict, Optional

from pydantic import BaseModel, field_serializer


class QualityMetrics(BaseModel):
    """PSNR in dB (inf for identical images, null in JSON) and SSIM."""
    psnr: float
    ssim: float

    @field_serializer("psnr", when_used="json")
    def serialize_psnr(self, v: float) -> Optional[float]:
        return v if math.isfinite(v) else None


class InferenceResult(BaseModel):
    """Outcome of restoring one image."""
    output_path: Optional[str] = None
    seed: int
    height: int
    width: int
    metrics: Optional[QualityMetrics] = None
    input_metrics: Optional[QualityMetrics] = None


class EvaluationReport(BaseModel):
    """Mean quality over a pairs directory."""
    pairs: int
    input: QualityMetrics
    restored: QualityMetrics

    @property
    def psnr_gain(self) -> float:
        return self.restored.psnr - self.input.psnr


class CheckpointInfo(BaseModel):
    """Checkpoint metadata exposed by the API."""
    path: str
    metadata: Dict[str, str]
    tensors: int
    parameters: int
