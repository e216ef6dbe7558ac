"""
Dual prompt diffusion: noise schedule, conditional MLP denoisers, the
training objective and the two reverse samplers.

Timesteps run 1..T. A prompt noised with ᾱ_t is denoised by calling the
network with timestep t, both in training and in sampling.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Protocol, Tuple

import numpy as np

from app.core.exceptions import DimensionError
from app.models.module import Linear, Module, ModuleList
from app.models.prompts import FrequencyPromptPair
from app.schemas.model import DiffusionConfig, PromptConfig, Sampler
from app.tensor import DEFAULT_DTYPE, Tensor, ops


NoisePredictor = Callable[[Tensor, Tensor, int], Tensor]


class DenoiserPair(Protocol):
    """Anything exposing a low- and a high-frequency noise predictor."""
    low: NoisePredictor
    high: NoisePredictor


@dataclass(frozen=True)
class DiffusionSchedule:
    """β_1..β_T and ᾱ_0..ᾱ_T with ᾱ_0 = 1."""
    betas: np.ndarray
    alpha_bar: np.ndarray

    def __post_init__(self) -> None:
        if not np.all((self.betas > 0) & (self.betas < 1)):
            raise ValueError("every beta must lie in (0, 1)")
        if self.alpha_bar[0] != 1.0 or not np.all(np.diff(self.alpha_bar) < 0):
            raise ValueError("alpha_bar must start at 1 and decrease strictly")

    @classmethod
    def linear(cls, timesteps: int, beta_start: float, beta_end: float) -> "DiffusionSchedule":
        betas = np.linspace(beta_start, beta_end, timesteps, dtype=np.float64)
        alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        return cls(betas=betas, alpha_bar=alpha_bar)

    @classmethod
    def from_config(cls, cfg: DiffusionConfig) -> "DiffusionSchedule":
        return cls.linear(cfg.timesteps, cfg.beta_start, cfg.beta_end)

    @property
    def timesteps(self) -> int:
        return len(self.betas)

    def check(self, t: int) -> None:
        if not 1 <= t <= self.timesteps:
            raise ValueError(f"timestep {t} outside 1..{self.timesteps}")


class Denoiser(Module):
    """
    ε_θ(P_c, P_t, t): an MLP over [flatten(P_c), flatten(P_t), onehot(t)].

    Hidden layers have width ``width_multiplier``·n_p·d_p and leaky relu
    activations; the output is reshaped to the prompt shape.
    """

    def __init__(self, prompt: PromptConfig, cfg: DiffusionConfig, rng: np.random.Generator):
        super().__init__()
        self.prompt_shape = (prompt.num_tokens, prompt.token_dim)
        self.timesteps = cfg.timesteps
        flat = prompt.flat_dim
        width = cfg.width_multiplier * flat
        sizes = [2 * flat + cfg.timesteps] + [width] * cfg.hidden_layers
        self.hidden = ModuleList(Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:]))
        self.head = Linear(width, flat, rng)

    def embed_timestep(self, t: int, dtype=DEFAULT_DTYPE) -> Tensor:
        if not 1 <= t <= self.timesteps:
            raise ValueError(f"timestep {t} outside 1..{self.timesteps}")
        onehot = np.zeros((1, self.timesteps), dtype=dtype)
        onehot[0, t - 1] = 1.0
        return Tensor(onehot)

    def forward(self, condition: Tensor, noisy: Tensor, t: int) -> Tensor:
        for prompt in (condition, noisy):
            if prompt.shape != self.prompt_shape:
                raise DimensionError.mismatch("denoiser", prompt.shape, self.prompt_shape)
        h = ops.concat([
            condition.reshape(1, -1),
            noisy.reshape(1, -1),
            self.embed_timestep(t, noisy.dtype),
        ], axis=1)
        for layer in self.hidden:
            h = ops.leaky_relu(layer(h))
        return self.head(h).reshape(*self.prompt_shape)


def forward_noise(p0: Tensor, t: int, eps: Tensor, sched: DiffusionSchedule) -> Tensor:
    """
    √ᾱ_t·P₀ + √(1−ᾱ_t)·ε, the prompt fed to the denoiser at timestep t.

    Raises:
        ValueError: If t is outside 1..T
    """
    sched.check(t)
    if p0.shape != eps.shape:
        raise DimensionError.mismatch("forward_noise", p0.shape, eps.shape)
    a = sched.alpha_bar[t]
    return ops.add(ops.scale(p0, float(np.sqrt(a))), ops.scale(eps, float(np.sqrt(1.0 - a))))


def diffusion_loss(
    p0: FrequencyPromptPair,
    condition: FrequencyPromptPair,
    t: int,
    eps: FrequencyPromptPair,
    denoisers: DenoiserPair,
    sched: DiffusionSchedule,
) -> Tuple[Tensor, Tensor, Tensor]:
    """
    Noise-prediction loss for both frequencies.

    Args:
        p0: Target prompts from the pre-trained encoder
        condition: Conditional prompts from the input-only encoder
        t: Timestep in 1..T
        eps: Standard normal noise, one draw per frequency
        denoisers: Low- and high-frequency noise predictors
        sched: Noise schedule

    Returns:
        (total, low, high), each a mean squared error over prompt coordinates
    """
    low = ops.mse_loss(denoisers.low(condition.low, forward_noise(p0.low, t, eps.low, sched), t), eps.low)
    high = ops.mse_loss(denoisers.high(condition.high, forward_noise(p0.high, t, eps.high, sched), t), eps.high)
    return ops.add(low, high), low, high


def draw_noise(rng: np.random.Generator, shape: Tuple[int, int], dtype=DEFAULT_DTYPE) -> Tensor:
    """Standard normal prompt noise from numpy's Generator.standard_normal."""
    return Tensor(rng.standard_normal(shape).astype(dtype))


def _renoise_step(p: Tensor, e: Tensor, t: int, sched: DiffusionSchedule) -> Tensor:
    a_t = sched.alpha_bar[t]
    a_prev = sched.alpha_bar[t - 1]
    x0 = ops.scale(ops.sub(p, ops.scale(e, float(np.sqrt(1.0 - a_t)))), float(1.0 / np.sqrt(a_t)))
    return ops.add(ops.scale(x0, float(np.sqrt(a_prev))), ops.scale(e, float(np.sqrt(1.0 - a_prev))))


def _subtract_step(p: Tensor, e: Tensor, t: int, sched: DiffusionSchedule) -> Tensor:
    return ops.sub(p, e)


STEP_RULES = {
    Sampler.RENOISE: _renoise_step,
    Sampler.SUBTRACT: _subtract_step,
}


def sample(
    condition: FrequencyPromptPair,
    denoisers: DenoiserPair,
    sched: DiffusionSchedule,
    seed: int,
    sampler: Sampler = Sampler.RENOISE,
    start: Optional[FrequencyPromptPair] = None,
) -> FrequencyPromptPair:
    """
    Generate (P^l_0, P^h_0) by iterating t = T..1 from Gaussian noise.

    The low-frequency start P^l_T is drawn before P^h_T from
    ``numpy.random.default_rng(seed)``. Gradients flow through the whole
    chain into the denoisers unless the caller runs under ``no_grad``.

    Args:
        condition: Conditional prompts P_c
        denoisers: Low- and high-frequency noise predictors
        sched: Noise schedule
        seed: Seed of the start noise
        sampler: Update rule per step
        start: Explicit (P^l_T, P^h_T), overriding the seeded draw

    Returns:
        Generated prompt pair
    """
    step = STEP_RULES[Sampler(sampler)]
    if start is None:
        rng = np.random.default_rng(seed)
        dtype = condition.low.dtype
        start = FrequencyPromptPair(
            low=draw_noise(rng, condition.shape, dtype),
            high=draw_noise(rng, condition.shape, dtype),
        )
    elif start.shape != condition.shape:
        raise DimensionError.mismatch("sample start", start.shape, condition.shape)
    low, high = start.low, start.high
    for t in range(sched.timesteps, 0, -1):
        low = step(low, denoisers.low(condition.low, low, t), t, sched)
        high = step(high, denoisers.high(condition.high, high, t), t, sched)
    return FrequencyPromptPair(low=low, high=high)
