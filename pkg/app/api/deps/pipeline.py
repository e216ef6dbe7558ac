"""Model loading dependencies."""

import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

from fastapi import Depends, HTTPException, status

from app.core.config import settings
from app.core.exceptions import CheckpointError
from app.models.pipeline import ReflectionModel
from app.services.checkpoint import Checkpoint, load_model

logger = logging.getLogger(__name__)


@dataclass
class LoadedPipeline:
    """A model together with the checkpoint it was read from."""
    path: Path
    model: ReflectionModel
    checkpoint: Checkpoint


@lru_cache(maxsize=4)
def load_pipeline(path: Path) -> LoadedPipeline:
    model, checkpoint = load_model(path)
    logger.info("serving checkpoint %s (preset %s)", path, checkpoint.preset)
    return LoadedPipeline(path=path, model=model, checkpoint=checkpoint)


def get_pipeline() -> LoadedPipeline:
    """
    Resolve the served model from ``settings.CHECKPOINT_PATH``.

    Raises:
        HTTPException: 503 when no usable checkpoint is configured
    """
    if settings.CHECKPOINT_PATH is None:
        raise HTTPException(
            status_code=status.HTTP_503_SERVICE_UNAVAILABLE,
            detail="No checkpoint configured (set CHECKPOINT_PATH)",
        )
    try:
        return load_pipeline(Path(settings.CHECKPOINT_PATH))
    except CheckpointError as exc:
        raise HTTPException(
            status_code=status.HTTP_503_SERVICE_UNAVAILABLE,
            detail=str(exc),
        ) from exc


def get_pipeline_dependency():
    """Dependency for getting the loaded model."""
    return Depends(get_pipeline)
