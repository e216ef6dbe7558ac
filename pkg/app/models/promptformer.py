"""Prompt-guided U-shaped restoration network."""

from typing import List, Optional, Tuple

import numpy as np

from app.core.exceptions import DimensionError
from app.models.blocks import PromptBlock
from app.models.module import Conv1x1, Conv2d, Module, ModuleList
from app.models.prompts import FrequencyPromptPair
from app.schemas.model import PiimMode, PromptConfig, PromptFormerConfig, PromptRouting
from app.tensor import Tensor, ops


class Upsample(Module):
    """Nearest-neighbour 2× upsample followed by a 1×1 channel reduction."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        super().__init__()
        self.proj = Conv1x1(in_channels, out_channels, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.proj(ops.upsample_nearest(x, 2))


class PromptFormer(Module):
    """
    Feature extractor, a multi-level encoder/latent/decoder trunk and a
    reconstruction stage, all built from prompt blocks.

    Extractor and reconstruction blocks only inject prompts; trunk blocks run
    the configured PIIM mode. The output projection starts at zero and the
    input is added back, so an untrained network returns its input.
    """

    def __init__(self, cfg: PromptFormerConfig, prompt: PromptConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.prompt = prompt
        tokens = 2 * prompt.num_tokens if cfg.prompt_routing == PromptRouting.BOTH_EVERYWHERE else prompt.num_tokens
        self.tokens_per_module = tokens

        def stage(level: int, count: int, mode: PiimMode) -> ModuleList:
            block_cfg = cfg.block(level, mode)
            return ModuleList(PromptBlock(block_cfg, tokens, prompt.token_dim, rng) for _ in range(count))

        last = cfg.num_stages - 1
        self.patch_embed = Conv2d(3, cfg.base_channels, rng)
        self.extractor = stage(0, cfg.extractor_blocks, PiimMode.INJECT_ONLY)
        self.encoders = ModuleList(stage(level, cfg.stage_blocks[level], cfg.piim_mode) for level in range(last))
        self.downs = ModuleList(
            Conv2d(cfg.stage_channels(level), cfg.stage_channels(level + 1), rng, stride=2) for level in range(last)
        )
        self.latent = stage(last, cfg.stage_blocks[last], cfg.piim_mode)
        # decoder modules are indexed by level, deepest first at run time
        self.ups = ModuleList(
            Upsample(cfg.stage_channels(level + 1), cfg.stage_channels(level), rng) for level in range(last)
        )
        self.decoders = ModuleList(stage(level, cfg.stage_blocks[level], cfg.piim_mode) for level in range(last))
        self.reconstruction = stage(0, cfg.reconstruction_blocks, PiimMode.INJECT_ONLY)
        self.output = Conv2d(cfg.base_channels, 3, rng, zero_init=True)

    def route(self, prompts: FrequencyPromptPair) -> Tuple[Tensor, Tensor]:
        """Prompts fed to the PMSA and PFFN sides of every block."""
        expected = (self.prompt.num_tokens, self.prompt.token_dim)
        if prompts.shape != expected:
            raise DimensionError.mismatch("PromptFormer prompts", prompts.shape, expected)
        if self.cfg.prompt_routing == PromptRouting.BOTH_EVERYWHERE:
            both = prompts.tokens()
            return both, both
        return prompts.low, prompts.high

    @staticmethod
    def _run(blocks: ModuleList, x: Tensor, msa_prompt: Optional[Tensor], ffn_prompt: Optional[Tensor]) -> Tensor:
        for block in blocks:
            x = block(x, msa_prompt, ffn_prompt)
        return x

    def restore(self, image: Tensor, prompts: FrequencyPromptPair) -> Tensor:
        """
        Restore a 3×H×W image guided by a prompt pair.

        Args:
            image: Reflection-contaminated input in [0, 1]
            prompts: Low- and high-frequency prompts

        Returns:
            Unclamped 3×H×W estimate of the background

        Raises:
            DimensionError: If H or W is not divisible by 2^(stages-1) or the prompts are mis-shaped
        """
        if image.ndim != 3 or image.shape[0] != 3:
            raise DimensionError(f"restore expects a 3×H×W image, got shape {image.shape}")
        multiple = self.cfg.size_multiple
        if image.shape[1] % multiple or image.shape[2] % multiple:
            raise DimensionError(
                f"restore: height and width must be divisible by {multiple}, got {image.shape[1]}×{image.shape[2]}"
            )
        msa_prompt, ffn_prompt = self.route(prompts)

        x = self._run(self.extractor, self.patch_embed(image), msa_prompt, ffn_prompt)
        skips: List[Tensor] = []
        for blocks, down in zip(self.encoders, self.downs):
            x = self._run(blocks, x, msa_prompt, ffn_prompt)
            skips.append(x)
            x = down(x)
        x = self._run(self.latent, x, msa_prompt, ffn_prompt)
        for level in reversed(range(len(skips))):
            x = ops.add(self.ups[level](x), skips[level])
            x = self._run(self.decoders[level], x, msa_prompt, ffn_prompt)
        x = self._run(self.reconstruction, x, msa_prompt, ffn_prompt)
        return ops.add(self.output(x), image)

    def forward(self, image: Tensor, prompts: FrequencyPromptPair) -> Tensor:
        return self.restore(image, prompts)
