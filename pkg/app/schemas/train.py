"""Training and run configuration schemas module."""

from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

from app.schemas.model import ModelConfig, Preset


class Stage(str, Enum):
    """Training stage."""
    PRETRAIN = "pretrain"
    DIFFUSION = "diffusion"
    JOINT = "joint"


# Iteration counts per preset and stage
STAGE_ITERATIONS: Dict[Preset, Dict[Stage, int]] = {
    Preset.PAPER: {Stage.PRETRAIN: 200_000, Stage.DIFFUSION: 20_000, Stage.JOINT: 280_000},
    Preset.DESK: {Stage.PRETRAIN: 500, Stage.DIFFUSION: 2_000, Stage.JOINT: 1_000},
}


class TrainConfig(BaseModel):
    """Optimization settings shared by the three stages."""
    iterations: Dict[Stage, int] = Field(default_factory=dict)
    batch_size: int = Field(8, gt=0)
    patch_size: int = Field(64, gt=0)
    learning_rate: float = Field(1e-4, gt=0)
    weight_decay: float = Field(1e-4, ge=0)
    seed: int = 7
    log_every: int = Field(10, gt=0)
    detach_prompts: bool = False
    reinit_restorer: bool = False

    @field_validator("patch_size")
    @classmethod
    def check_even(cls, v: int) -> int:
        if v % 2:
            raise ValueError("patch_size must be even for the wavelet split")
        return v

    def iterations_for(self, stage: Stage, preset: Preset) -> int:
        return self.iterations.get(Stage(stage), STAGE_ITERATIONS[Preset(preset)][Stage(stage)])


class SynthSpec(BaseModel):
    """Reflection synthesis parameters."""
    kernel_size: int = Field(11, gt=0)
    sigma_range: Tuple[float, float] = (1.0, 3.0)
    reflection_weight: Tuple[float, float] = (0.2, 0.8)
    seed: int = 7

    @field_validator("kernel_size")
    @classmethod
    def check_odd(cls, v: int) -> int:
        if v % 2 == 0:
            raise ValueError("kernel_size must be odd")
        return v

    @field_validator("sigma_range", "reflection_weight")
    @classmethod
    def check_range(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        low, high = v
        if low < 0 or high < low:
            raise ValueError(f"invalid range {v}")
        return v


class RunConfig(BaseModel):
    """Root of a configuration file."""
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    synth: SynthSpec = Field(default_factory=SynthSpec)

    @model_validator(mode="after")
    def check_patch(self) -> "RunConfig":
        multiple = self.model.promptformer.size_multiple
        if self.train.patch_size % multiple:
            raise ValueError(f"patch_size {self.train.patch_size} must be divisible by {multiple}")
        return self

    @classmethod
    def from_preset(cls, preset: Preset, seed: Optional[int] = None) -> "RunConfig":
        preset = Preset(preset)
        train = TrainConfig(patch_size=128) if preset == Preset.PAPER else TrainConfig()
        if seed is not None:
            train.seed = seed
        return cls(model=ModelConfig.from_preset(preset), train=train)


class StepRecord(BaseModel):
    """One line of the metrics file."""
    stage: Stage
    step: int
    l1: float = 0.0
    ldiff_l: float = 0.0
    ldiff_h: float = 0.0
    total: float = 0.0


class StageResult(BaseModel):
    """Outcome of one training stage."""
    stage: Stage
    checkpoint: str
    iterations: int
    records: List[StepRecord] = Field(default_factory=list)

    @property
    def initial_total(self) -> float:
        return self.records[0].total if self.records else 0.0

    @property
    def final_total(self) -> float:
        return self.records[-1].total if self.records else 0.0
