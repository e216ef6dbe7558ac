"""Model information endpoints."""

from fastapi import APIRouter

from app.api.deps.pipeline import LoadedPipeline, get_pipeline_dependency
from app.schemas.inference import CheckpointInfo

router = APIRouter(tags=["model"], prefix="/model")


@router.get("", response_model=CheckpointInfo)
def read_model(
    pipeline: LoadedPipeline = get_pipeline_dependency(),
) -> CheckpointInfo:
    """
    Get metadata of the served checkpoint.
    """
    metadata = {k: v for k, v in pipeline.checkpoint.metadata.items() if k != "model_config"}
    return CheckpointInfo(
        path=str(pipeline.path),
        metadata=metadata,
        tensors=len(pipeline.checkpoint.tensors),
        parameters=pipeline.model.num_parameters(),
    )
