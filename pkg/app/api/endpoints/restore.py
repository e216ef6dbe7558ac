"""Reflection removal endpoints."""

import logging

from fastapi import APIRouter, File, HTTPException, Query, Response, UploadFile, status

from app.api.deps.pipeline import LoadedPipeline, get_pipeline_dependency
from app.core.config import settings
from app.core.exceptions import DimensionError, ImageFormatError
from app.services.imageio import decode_ppm, encode_ppm
from app.services.inference import restore_image
from app.tensor import Tensor

logger = logging.getLogger(__name__)

router = APIRouter(tags=["restore"], prefix="/restore")

PPM_MEDIA_TYPE = "image/x-portable-pixmap"


def read_upload(upload: UploadFile) -> Tensor:
    """Decode an uploaded PPM, mapping format errors to 400."""
    try:
        return Tensor(decode_ppm(upload.file.read()))
    except ImageFormatError as exc:
        raise HTTPException(
            status_code=status.HTTP_400_BAD_REQUEST,
            detail=f"{upload.filename}: {exc}",
        ) from exc


@router.post("", response_class=Response)
def restore(
    image: UploadFile = File(...),
    seed: int = Query(settings.DEFAULT_SEED),
    pipeline: LoadedPipeline = get_pipeline_dependency(),
) -> Response:
    """
    Remove reflections from an uploaded PPM image; the result is returned as PPM.
    """
    tensor = read_upload(image)
    try:
        restored = restore_image(pipeline.model, tensor, seed)
    except DimensionError as exc:
        raise HTTPException(
            status_code=status.HTTP_400_BAD_REQUEST,
            detail=str(exc),
        ) from exc
    _, height, width = tensor.shape
    logger.info("restored %s (%d×%d, seed %d)", image.filename, height, width, seed)
    return Response(content=encode_ppm(restored.data), media_type=PPM_MEDIA_TYPE)
