"""Network configuration schemas module."""

import hashlib
import math
from enum import Enum
from typing import List, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator


class Preset(str, Enum):
    """Model size preset."""
    PAPER = "paper"
    DESK = "desk"


class PiimMode(str, Enum):
    """How a prompt interaction and injection module behaves."""
    FULL = "full"
    INJECT_ONLY = "inject_only"
    OFF = "off"


class PromptUsage(str, Enum):
    """Which half of a prompt block consumes the prompt."""
    BOTH = "both"
    MSA_ONLY = "msa_only"
    FFN_ONLY = "ffn_only"
    NONE = "none"


class PromptRouting(str, Enum):
    """Which frequency prompt feeds which sub-module."""
    LF_MSA_HF_FFN = "lf_msa_hf_ffn"
    BOTH_EVERYWHERE = "both_everywhere"


class PromptGenerator(str, Enum):
    """Source of prompts at inference time."""
    DIFFUSION = "diffusion"
    DIRECT = "direct"


class FpeInput(str, Enum):
    """What the pre-training prompt encoder sees."""
    CONCAT = "concat"
    GT_ONLY = "gt_only"


class Sampler(str, Enum):
    """Reverse diffusion update rule."""
    RENOISE = "renoise"
    SUBTRACT = "subtract"


def token_grid(num_tokens: int) -> Tuple[int, int]:
    """Most square rows × cols factorization of a token count."""
    rows = int(math.isqrt(num_tokens))
    while num_tokens % rows:
        rows -= 1
    return rows, num_tokens // rows


class PromptConfig(BaseModel):
    """Prompt geometry: n_p tokens of d_p features."""
    num_tokens: int = Field(4, ge=1)
    token_dim: int = Field(16, ge=1)

    @property
    def grid(self) -> Tuple[int, int]:
        return token_grid(self.num_tokens)

    @property
    def flat_dim(self) -> int:
        return self.num_tokens * self.token_dim


class TPBConfig(BaseModel):
    """Transformer-based prompt block."""
    channels: int = Field(..., gt=0)
    heads: int = Field(..., gt=0)
    piim_mode: PiimMode = PiimMode.FULL
    use_prompt_in: PromptUsage = PromptUsage.BOTH
    ffn_expansion: float = Field(2.0, gt=0)
    normalize_qk: bool = False

    @model_validator(mode="after")
    def check_heads(self) -> "TPBConfig":
        if self.channels % self.heads:
            raise ValueError(f"channels ({self.channels}) must be divisible by heads ({self.heads})")
        return self

    @property
    def msa_mode(self) -> PiimMode:
        if self.use_prompt_in in (PromptUsage.BOTH, PromptUsage.MSA_ONLY):
            return self.piim_mode
        return PiimMode.OFF

    @property
    def ffn_mode(self) -> PiimMode:
        if self.use_prompt_in in (PromptUsage.BOTH, PromptUsage.FFN_ONLY):
            return self.piim_mode
        return PiimMode.OFF


class FPEConfig(BaseModel):
    """Frequency prompt encoder branch sizes."""
    channels: int = Field(16, gt=0)
    res_blocks: int = Field(2, ge=0)
    hidden: int = Field(64, gt=0)


class PromptFormerConfig(BaseModel):
    """Restoration network."""
    base_channels: int = Field(16, gt=0)
    stage_blocks: List[int] = Field(default_factory=lambda: [1, 2, 2, 2])
    stage_heads: List[int] = Field(default_factory=lambda: [1, 2, 2, 4])
    extractor_blocks: int = Field(1, ge=0)
    reconstruction_blocks: int = Field(1, ge=0)
    piim_mode: PiimMode = PiimMode.FULL
    use_prompt_in: PromptUsage = PromptUsage.BOTH
    prompt_routing: PromptRouting = PromptRouting.LF_MSA_HF_FFN
    ffn_expansion: float = Field(2.0, gt=0)
    normalize_qk: bool = False

    @field_validator("stage_blocks")
    @classmethod
    def check_blocks(cls, v: List[int]) -> List[int]:
        if not v or any(n < 0 for n in v):
            raise ValueError("stage_blocks must be a non-empty list of non-negative counts")
        return v

    @model_validator(mode="after")
    def check_heads(self) -> "PromptFormerConfig":
        if len(self.stage_heads) != len(self.stage_blocks):
            raise ValueError("stage_heads and stage_blocks must have the same length")
        for level, heads in enumerate(self.stage_heads):
            channels = self.stage_channels(level)
            if heads <= 0 or channels % heads:
                raise ValueError(f"stage {level}: {heads} heads do not divide {channels} channels")
        return self

    @property
    def num_stages(self) -> int:
        return len(self.stage_blocks)

    @property
    def size_multiple(self) -> int:
        """Input height and width must be divisible by this."""
        return 2 ** (self.num_stages - 1)

    def stage_channels(self, level: int) -> int:
        return self.base_channels * 2 ** level

    def block(self, level: int, piim_mode: PiimMode) -> TPBConfig:
        return TPBConfig(
            channels=self.stage_channels(level),
            heads=self.stage_heads[level],
            piim_mode=piim_mode,
            use_prompt_in=self.use_prompt_in,
            ffn_expansion=self.ffn_expansion,
            normalize_qk=self.normalize_qk,
        )


class DiffusionConfig(BaseModel):
    """Prompt diffusion schedule and denoiser."""
    timesteps: int = Field(4, ge=1)
    beta_start: float = Field(0.1, gt=0, lt=1)
    beta_end: float = Field(0.99, gt=0, lt=1)
    hidden_layers: int = Field(4, ge=1)
    width_multiplier: int = Field(4, ge=1)
    sampler: Sampler = Sampler.RENOISE


class ModelConfig(BaseModel):
    """Everything needed to build the networks."""
    preset: Preset = Preset.DESK
    prompt: PromptConfig = Field(default_factory=PromptConfig)
    fpe: FPEConfig = Field(default_factory=FPEConfig)
    promptformer: PromptFormerConfig = Field(default_factory=PromptFormerConfig)
    diffusion: DiffusionConfig = Field(default_factory=DiffusionConfig)
    prompt_generator: PromptGenerator = PromptGenerator.DIFFUSION
    fpe_pre_input: FpeInput = FpeInput.CONCAT

    @classmethod
    def from_preset(cls, preset: Preset) -> "ModelConfig":
        preset = Preset(preset)
        if preset == Preset.PAPER:
            return cls(
                preset=preset,
                prompt=PromptConfig(num_tokens=4, token_dim=64),
                fpe=FPEConfig(channels=64, res_blocks=4, hidden=256),
                promptformer=PromptFormerConfig(
                    base_channels=48,
                    stage_blocks=[4, 6, 6, 8],
                    stage_heads=[1, 2, 4, 8],
                    extractor_blocks=4,
                    reconstruction_blocks=4,
                ),
            )
        return cls(preset=preset)

    @property
    def prompt_tokens_per_module(self) -> int:
        if self.promptformer.prompt_routing == PromptRouting.BOTH_EVERYWHERE:
            return 2 * self.prompt.num_tokens
        return self.prompt.num_tokens

    def config_hash(self) -> str:
        return hashlib.sha256(self.model_dump_json().encode("utf-8")).hexdigest()[:16]
