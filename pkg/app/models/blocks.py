"""Transformer building blocks with prompt interaction and injection.

Feature maps are C×H×W tensors; prompts are n_p×d_p token matrices.
"""

from typing import Optional, Tuple

import numpy as np

from app.core.exceptions import DimensionError
from app.models.module import Conv1x1, DepthwiseConv3x3, LayerNorm, Linear, Module, zeros
from app.schemas.model import PiimMode, TPBConfig, token_grid
from app.tensor import Tensor, ops

PROMPT_EPS = 1e-5


class ChannelAttention(Module):
    """
    Multi-dconv head transposed attention (MDTA).

    Q, K and V come from a 1×1 convolution followed by a depth-wise 3×3
    convolution; attention is a (C/heads)×(C/heads) matrix per head, computed
    across channels rather than pixels.
    """

    def __init__(self, channels: int, heads: int, rng: np.random.Generator, normalize_qk: bool = False):
        super().__init__()
        if channels % heads:
            raise DimensionError(f"MDTA: {heads} heads do not divide {channels} channels")
        self.channels = channels
        self.heads = heads
        self.normalize_qk = normalize_qk
        self.norm = LayerNorm(channels)
        self.qkv = Conv1x1(channels, 3 * channels, rng)
        self.qkv_dwconv = DepthwiseConv3x3(3 * channels, rng)
        # α = exp(log α) stays positive; it starts at 1
        self.log_temperature = zeros((heads, 1, 1))
        self.project_out = Conv1x1(channels, channels, rng)

    @property
    def temperature(self) -> Tensor:
        return ops.exp(self.log_temperature)

    def attention_map(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        """Per-head channel attention matrices and values for a normalized input."""
        channels, height, width = x.shape
        if channels != self.channels:
            raise DimensionError.mismatch("MDTA", x.shape, (self.channels,))
        per_head = channels // self.heads
        qkv = self.qkv_dwconv(self.qkv(x))
        q = qkv[:channels].reshape(self.heads, per_head, height * width)
        k = qkv[channels:2 * channels].reshape(self.heads, per_head, height * width)
        v = qkv[2 * channels:].reshape(self.heads, per_head, height * width)
        if self.normalize_qk:
            q = ops.l2_normalize(q, axis=-1)
            k = ops.l2_normalize(k, axis=-1)
        logits = ops.div(ops.matmul(q, ops.swap_last(k)), self.temperature)
        return ops.softmax(logits, axis=-1), v

    def attend(self, x: Tensor) -> Tensor:
        """Attention branch without normalization or residual."""
        channels, height, width = x.shape
        attn, v = self.attention_map(x)
        out = ops.matmul(attn, v).reshape(channels, height, width)
        return self.project_out(out)

    def forward(self, x: Tensor, residual: bool = True) -> Tensor:
        out = self.attend(self.norm(x))
        return ops.add(out, x) if residual else out


class GatedFeedForward(Module):
    """
    Gated-dconv feed-forward network (GDFN).

    Gate(x) = gelu(dw1(pw1(x))) * dw2(pw2(x)); both branches share one fused
    1×1/3×3 pair whose output channels are split in half.
    """

    def __init__(self, channels: int, expansion: float, rng: np.random.Generator):
        super().__init__()
        hidden = int(channels * expansion)
        self.channels = channels
        self.hidden = hidden
        self.norm = LayerNorm(channels)
        self.project_in = Conv1x1(channels, 2 * hidden, rng)
        self.dwconv = DepthwiseConv3x3(2 * hidden, rng)
        self.project_out = Conv1x1(hidden, channels, rng)

    def gate(self, x: Tensor) -> Tensor:
        if x.shape[0] != self.channels:
            raise DimensionError.mismatch("GDFN", x.shape, (self.channels,))
        mixed = self.dwconv(self.project_in(x))
        return ops.mul(ops.gelu(mixed[:self.hidden]), mixed[self.hidden:])

    def attend(self, x: Tensor) -> Tensor:
        """Feed-forward branch without normalization or residual."""
        return self.project_out(self.gate(x))

    def forward(self, x: Tensor, residual: bool = True) -> Tensor:
        out = self.attend(self.norm(x))
        return ops.add(out, x) if residual else out


class PromptFusion(Module):
    """Token-wise linear → layer norm → leaky relu → linear; the last layer starts at zero."""

    def __init__(self, token_dim: int, rng: np.random.Generator):
        super().__init__()
        self.fc1 = Linear(token_dim, token_dim, rng)
        self.norm = LayerNorm(token_dim, axis=-1)
        self.fc2 = Linear(token_dim, token_dim, rng, zero_init=True)

    def forward(self, prompt: Tensor) -> Tensor:
        return self.fc2(ops.leaky_relu(self.norm(self.fc1(prompt))))


class PIIM(Module):
    """
    Prompt interaction and injection module.

    Interaction turns the feature map into prompt-shaped tokens (adaptive
    pooling to the token grid plus two linear layers), cross-attends them with
    the prompt and re-normalizes the result with a prompt-conditioned scale and
    shift. Injection flattens the refined prompt into a per-channel scale and
    shift applied to the feature map.
    """

    def __init__(self, channels: int, num_tokens: int, token_dim: int, mode: PiimMode,
                 rng: np.random.Generator):
        super().__init__()
        self.mode = PiimMode(mode)
        self.channels = channels
        self.num_tokens = num_tokens
        self.token_dim = token_dim
        self.pool_grid = token_grid(num_tokens)
        if self.mode == PiimMode.FULL:
            self.embed_in = Linear(channels, token_dim, rng)
            self.embed_out = Linear(token_dim, token_dim, rng)
            self.wq = Linear(token_dim, token_dim, rng, bias=False)
            self.wk = Linear(token_dim, token_dim, rng, bias=False)
            self.wv = Linear(token_dim, token_dim, rng, bias=False)
            self.log_alpha = zeros((1,))
            self.f_gamma = PromptFusion(token_dim, rng)
            self.f_beta = PromptFusion(token_dim, rng)
        if self.mode != PiimMode.OFF:
            self.w1 = Linear(num_tokens * token_dim, channels, rng)
            self.w2 = Linear(num_tokens * token_dim, channels, rng)

    @property
    def alpha(self) -> Tensor:
        return ops.exp(self.log_alpha)

    def _check_prompt(self, prompt: Tensor) -> None:
        if prompt.shape != (self.num_tokens, self.token_dim):
            raise DimensionError.mismatch("PIIM prompt", prompt.shape, (self.num_tokens, self.token_dim))

    def tokens(self, x: Tensor) -> Tensor:
        """X̂: the feature map pooled to the token grid and embedded, n_p×d_p."""
        rows, cols = self.pool_grid
        pooled = ops.adaptive_avg_pool(x, (rows, cols))
        tokens = pooled.reshape(self.channels, rows * cols).T
        return self.embed_out(ops.leaky_relu(self.embed_in(tokens)))

    def adapt(self, attended: Tensor) -> Tensor:
        """Adaptive pooling back to the prompt shape; identity when shapes already agree."""
        if attended.shape == (self.num_tokens, self.token_dim):
            return attended
        pooled = ops.adaptive_avg_pool(attended.reshape(1, *attended.shape), (self.num_tokens, self.token_dim))
        return pooled.reshape(self.num_tokens, self.token_dim)

    def cross_attention(self, x_hat: Tensor, prompt: Tensor) -> Tensor:
        """Softmax(QKᵀ/α) with queries from the pooled features and keys from the prompt."""
        q = self.wq(x_hat)
        k = self.wk(prompt)
        return ops.softmax(ops.div(ops.matmul(q, k.T), self.alpha), axis=-1)

    def interact(self, x: Tensor, prompt: Tensor) -> Tensor:
        """Refined prompt P_r = standardize(P') ⊙ (1 + γ(P)) + β(P)."""
        if self.mode != PiimMode.FULL:
            raise RuntimeError(f"interaction is disabled in mode {self.mode.value}")
        self._check_prompt(prompt)
        x_hat = self.tokens(x)
        attn = self.cross_attention(x_hat, prompt)
        v = self.wv(x_hat)
        refined = self.adapt(ops.matmul(attn, v))
        normalized = ops.standardize(refined, axis=-1, eps=PROMPT_EPS)
        gamma = self.f_gamma(prompt)
        beta = self.f_beta(prompt)
        return ops.add(ops.mul(normalized, ops.add(gamma, 1.0)), beta)

    def inject(self, x: Tensor, refined: Tensor) -> Tensor:
        """X' = (W₁P_r) ⊙ X + W₂P_r with per-channel scale and shift broadcast over space."""
        if x.ndim != 3 or x.shape[0] != self.channels:
            raise DimensionError.mismatch("PIIM inject", x.shape, (self.channels,))
        self._check_prompt(refined)
        flat = refined.reshape(1, self.num_tokens * self.token_dim)
        scale = self.w1(flat).reshape(self.channels, 1, 1)
        shift = self.w2(flat).reshape(self.channels, 1, 1)
        return ops.add(ops.mul(x, scale), shift)

    def forward(self, x: Tensor, prompt: Optional[Tensor]) -> Tensor:
        if self.mode == PiimMode.OFF:
            return x
        if prompt is None:
            raise DimensionError("PIIM: a prompt is required when the module is enabled")
        if self.mode == PiimMode.FULL:
            refined = self.interact(x, prompt)
        else:
            self._check_prompt(prompt)
            refined = ops.standardize(prompt, axis=-1, eps=PROMPT_EPS)
        return self.inject(x, refined)


class PromptAttention(Module):
    """PMSA: layer norm → PIIM → MDTA attention branch. The residual belongs to the caller."""

    def __init__(self, cfg: TPBConfig, num_tokens: int, token_dim: int, rng: np.random.Generator):
        super().__init__()
        self.attention = ChannelAttention(cfg.channels, cfg.heads, rng, normalize_qk=cfg.normalize_qk)
        self.piim = PIIM(cfg.channels, num_tokens, token_dim, cfg.msa_mode, rng)

    def forward(self, x: Tensor, prompt: Optional[Tensor]) -> Tensor:
        normalized = self.attention.norm(x)
        return self.attention.attend(self.piim(normalized, prompt))


class PromptFeedForward(Module):
    """PFFN: layer norm → PIIM → GDFN gated branch. The residual belongs to the caller."""

    def __init__(self, cfg: TPBConfig, num_tokens: int, token_dim: int, rng: np.random.Generator):
        super().__init__()
        self.ffn = GatedFeedForward(cfg.channels, cfg.ffn_expansion, rng)
        self.piim = PIIM(cfg.channels, num_tokens, token_dim, cfg.ffn_mode, rng)

    def forward(self, x: Tensor, prompt: Optional[Tensor]) -> Tensor:
        normalized = self.ffn.norm(x)
        return self.ffn.attend(self.piim(normalized, prompt))


class PromptBlock(Module):
    """
    Transformer-based prompt block (TPB).

    X' = X + PMSA(X, P_msa);  X_out = X' + PFFN(X', P_ffn)
    """

    def __init__(self, cfg: TPBConfig, num_tokens: int, token_dim: int, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.pmsa = PromptAttention(cfg, num_tokens, token_dim, rng)
        self.pffn = PromptFeedForward(cfg, num_tokens, token_dim, rng)

    def forward(self, x: Tensor, msa_prompt: Optional[Tensor], ffn_prompt: Optional[Tensor]) -> Tensor:
        x = ops.add(x, self.pmsa(x, msa_prompt))
        return ops.add(x, self.pffn(x, ffn_prompt))
