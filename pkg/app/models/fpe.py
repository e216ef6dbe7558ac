"""Frequency prompt encoder: wavelet split followed by a low- and a high-frequency branch."""

import numpy as np

from app.core.exceptions import DimensionError
from app.models.module import Conv2d, Linear, Module, ModuleList
from app.models.prompts import FrequencyPromptPair
from app.models.wavelet import split_freq
from app.schemas.model import FPEConfig, PromptConfig
from app.tensor import Tensor, ops


class ResidualBlock(Module):
    """conv3×3 → leaky relu → conv3×3, plus the input."""

    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d(channels, channels, rng)
        self.conv2 = Conv2d(channels, channels, rng)

    def forward(self, x: Tensor) -> Tensor:
        return ops.add(x, self.conv2(ops.leaky_relu(self.conv1(x))))


class EncoderBranch(Module):
    """Stem, residual blocks, global average pool and a two-layer head reshaped to n_p×d_p."""

    def __init__(self, in_channels: int, cfg: FPEConfig, prompt: PromptConfig, rng: np.random.Generator):
        super().__init__()
        self.in_channels = in_channels
        self.prompt_shape = (prompt.num_tokens, prompt.token_dim)
        self.stem = Conv2d(in_channels, cfg.channels, rng)
        self.body = ModuleList(ResidualBlock(cfg.channels, rng) for _ in range(cfg.res_blocks))
        self.fc1 = Linear(cfg.channels, cfg.hidden, rng)
        self.fc2 = Linear(cfg.hidden, prompt.flat_dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[0] != self.in_channels:
            raise DimensionError.mismatch("FPE branch", x.shape, (self.in_channels,))
        features = self.stem(x)
        for block in self.body:
            features = block(features)
        pooled = ops.global_avg_pool(features).reshape(1, -1)
        return self.fc2(ops.leaky_relu(self.fc1(pooled))).reshape(*self.prompt_shape)


class FrequencyPromptEncoder(Module):
    """
    Dual-branch encoder over k stacked RGB images.

    Each image is split into its LL band (3 channels) and the LH/HL/HH bands
    (9 channels); the LL bands of all images feed the low-frequency branch and
    the rest feed the high-frequency branch.
    """

    def __init__(self, images: int, cfg: FPEConfig, prompt: PromptConfig, rng: np.random.Generator):
        super().__init__()
        if images < 1:
            raise ValueError("the encoder needs at least one input image")
        self.images = images
        self.low = EncoderBranch(3 * images, cfg, prompt, rng)
        self.high = EncoderBranch(9 * images, cfg, prompt, rng)

    def encode(self, images: Tensor) -> FrequencyPromptPair:
        """
        Encode a 3k×H×W stack into (P^l, P^h).

        Args:
            images: k RGB images concatenated along the channel axis

        Returns:
            FrequencyPromptPair of two n_p×d_p prompts

        Raises:
            DimensionError: If the channel count is not 3k or H, W are odd
        """
        if images.ndim != 3 or images.shape[0] != 3 * self.images:
            raise DimensionError(
                f"FPE expects {3 * self.images}×H×W ({self.images} RGB images), got shape {images.shape}"
            )
        lows, highs = [], []
        for i in range(self.images):
            lf, hf = split_freq(images[3 * i:3 * (i + 1)])
            lows.append(lf)
            highs.append(hf)
        low_in = lows[0] if len(lows) == 1 else ops.concat(lows, axis=0)
        high_in = highs[0] if len(highs) == 1 else ops.concat(highs, axis=0)
        return FrequencyPromptPair(low=self.low(low_in), high=self.high(high_in))

    def forward(self, images: Tensor) -> FrequencyPromptPair:
        return self.encode(images)
