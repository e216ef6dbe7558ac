"""The full set of networks trained and served together."""

import logging
from typing import Optional

import numpy as np

from app.models.diffusion import Denoiser, DiffusionSchedule, sample
from app.models.fpe import FrequencyPromptEncoder
from app.models.module import Module
from app.models.prompts import FrequencyPromptPair
from app.models.promptformer import PromptFormer
from app.schemas.model import (
    DiffusionConfig,
    FpeInput,
    FPEConfig,
    ModelConfig,
    PromptConfig,
    PromptFormerConfig,
    PromptGenerator,
    token_grid,
)
from app.tensor import Tensor, ops

logger = logging.getLogger(__name__)

# state-dict prefixes of the sub-networks
FPE_PRE = "fpe_pre."
FPE_CON = "fpe_con."
RESTORER = "restorer."
DENOISER_L = "denoiser_l."
DENOISER_H = "denoiser_h."


class DenoiserView:
    """Low/high noise predictors of a model, in the shape the samplers expect."""

    def __init__(self, low: Denoiser, high: Denoiser):
        self.low = low
        self.high = high


class ReflectionModel(Module):
    """
    FPE_pre, FPE_con, the restorer and two denoisers.

    Sub-network initialisation draws from one generator in a fixed order,
    so a seed fully determines the untrained weights.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 7):
        super().__init__()
        self.cfg = cfg
        self.seed = seed
        rng = np.random.default_rng(seed)
        pre_images = 1 if cfg.fpe_pre_input == FpeInput.GT_ONLY else 2
        self.fpe_pre = FrequencyPromptEncoder(pre_images, cfg.fpe, cfg.prompt, rng)
        self.fpe_con = FrequencyPromptEncoder(1, cfg.fpe, cfg.prompt, rng)
        self.restorer = PromptFormer(cfg.promptformer, cfg.prompt, rng)
        self.denoiser_l = Denoiser(cfg.prompt, cfg.diffusion, rng)
        self.denoiser_h = Denoiser(cfg.prompt, cfg.diffusion, rng)
        self.schedule = DiffusionSchedule.from_config(cfg.diffusion)
        logger.debug("built model preset=%s parameters=%d", cfg.preset.value, self.num_parameters())

    @property
    def denoisers(self) -> DenoiserView:
        return DenoiserView(self.denoiser_l, self.denoiser_h)

    @property
    def size_multiple(self) -> int:
        return self.cfg.promptformer.size_multiple

    @property
    def min_size(self) -> int:
        """Smallest input side keeping the deepest level at least as large as the token grid."""
        rows, cols = token_grid(self.restorer.tokens_per_module)
        return self.size_multiple * max(rows, cols, 2)

    def reinit_restorer(self, seed: int) -> None:
        """Replace the restorer by a freshly initialised one."""
        self.restorer = PromptFormer(self.cfg.promptformer, self.cfg.prompt, np.random.default_rng(seed))

    def pretrain_prompts(self, image: Tensor, gt: Tensor) -> FrequencyPromptPair:
        """Prompts of the pre-training encoder: FPE_pre(concat(GT, input)) or FPE_pre(GT)."""
        if self.cfg.fpe_pre_input == FpeInput.GT_ONLY:
            return self.fpe_pre.encode(gt)
        return self.fpe_pre.encode(ops.concat([gt, image], axis=0))

    def condition_prompts(self, image: Tensor) -> FrequencyPromptPair:
        return self.fpe_con.encode(image)

    def generate_prompts(self, image: Tensor, seed: int) -> FrequencyPromptPair:
        """Inference-time prompts: sampled by the denoisers or taken directly from FPE_con."""
        condition = self.condition_prompts(image)
        if self.cfg.prompt_generator == PromptGenerator.DIRECT:
            return condition
        return sample(condition, self.denoisers, self.schedule, seed, sampler=self.cfg.diffusion.sampler)

    def restore(self, image: Tensor, seed: int, prompts: Optional[FrequencyPromptPair] = None) -> Tensor:
        if prompts is None:
            prompts = self.generate_prompts(image, seed)
        return self.restorer.restore(image, prompts)


def micro_config(base: Optional[ModelConfig] = None) -> ModelConfig:
    """
    The smallest model instantiating every block type, for gradient audits.

    Ablation switches are taken from ``base`` so the audited graph matches
    the configured variant.
    """
    base = base or ModelConfig()
    return ModelConfig(
        preset=base.preset,
        prompt=PromptConfig(num_tokens=2, token_dim=4),
        fpe=FPEConfig(channels=4, res_blocks=1, hidden=8),
        promptformer=PromptFormerConfig(
            base_channels=4,
            stage_blocks=[1, 1, 1, 1],
            stage_heads=[1, 1, 1, 1],
            extractor_blocks=1,
            reconstruction_blocks=1,
            piim_mode=base.promptformer.piim_mode,
            use_prompt_in=base.promptformer.use_prompt_in,
            prompt_routing=base.promptformer.prompt_routing,
            ffn_expansion=base.promptformer.ffn_expansion,
            normalize_qk=base.promptformer.normalize_qk,
        ),
        diffusion=DiffusionConfig(
            timesteps=base.diffusion.timesteps,
            beta_start=base.diffusion.beta_start,
            beta_end=base.diffusion.beta_end,
            hidden_layers=2,
            width_multiplier=1,
            sampler=base.diffusion.sampler,
        ),
        prompt_generator=base.prompt_generator,
        fpe_pre_input=base.fpe_pre_input,
    )
