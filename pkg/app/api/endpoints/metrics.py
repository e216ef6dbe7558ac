"""Image quality endpoints."""

from fastapi import APIRouter, File, HTTPException, UploadFile, status

from app.api.endpoints.restore import read_upload
from app.core.exceptions import DimensionError
from app.schemas.inference import QualityMetrics
from app.services.metrics import quality

router = APIRouter(tags=["metrics"], prefix="/metrics")


@router.post("", response_model=QualityMetrics)
def compare(
    image: UploadFile = File(...),
    reference: UploadFile = File(...),
) -> QualityMetrics:
    """
    PSNR and SSIM of an image against a reference, both uploaded as PPM.
    """
    try:
        return quality(read_upload(image), read_upload(reference))
    except DimensionError as exc:
        raise HTTPException(
            status_code=status.HTTP_400_BAD_REQUEST,
            detail=str(exc),
        ) from exc
