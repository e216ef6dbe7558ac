import numpy as np
import pytest

from app.core.exceptions import DimensionError
from app.models.diffusion import (
    Denoiser,
    DiffusionSchedule,
    diffusion_loss,
    draw_noise,
    forward_noise,
    sample,
)
from app.models.prompts import FrequencyPromptPair
from app.schemas.model import DiffusionConfig, PromptConfig, Sampler
from app.tensor import Tensor, backward, ops

SHAPE = (4, 8)


class TrueNoise:
    """Predicts the exact noise that maps p0 to the noisy prompt."""

    def __init__(self, p0: Tensor, sched: DiffusionSchedule):
        self.p0 = p0
        self.sched = sched

    def __call__(self, condition: Tensor, noisy: Tensor, t: int) -> Tensor:
        a = self.sched.alpha_bar[t]
        return Tensor((noisy.data - np.sqrt(a) * self.p0.data) / np.sqrt(1.0 - a))


class StubPair:
    def __init__(self, low, high):
        self.low = low
        self.high = high


class ZeroNoise:
    def __call__(self, condition: Tensor, noisy: Tensor, t: int) -> Tensor:
        return ops.scale(noisy, 0.0)


def pair(rng) -> FrequencyPromptPair:
    return FrequencyPromptPair(low=Tensor(rng.standard_normal(SHAPE)), high=Tensor(rng.standard_normal(SHAPE)))


def test_linear_schedule():
    sched = DiffusionSchedule.linear(4, 0.1, 0.99)
    np.testing.assert_allclose(sched.betas, [0.1, 0.1 + 0.89 / 3, 0.1 + 2 * 0.89 / 3, 0.99])
    assert sched.alpha_bar[0] == 1.0
    np.testing.assert_allclose(sched.alpha_bar[1:], np.cumprod(1.0 - sched.betas))
    assert sched.timesteps == 4


def test_schedule_rejects_bad_betas():
    with pytest.raises(ValueError):
        DiffusionSchedule.linear(3, 0.0, 0.5)


def test_forward_noise_without_noise_scales_prompt(rng):
    sched = DiffusionSchedule.linear(4, 0.1, 0.99)
    p0 = Tensor(rng.standard_normal(SHAPE))
    for t in range(1, 5):
        out = forward_noise(p0, t, Tensor(np.zeros(SHAPE)), sched)
        np.testing.assert_array_equal(out.data, p0.data * np.sqrt(sched.alpha_bar[t]))


def test_forward_noise_moments(rng):
    sched = DiffusionSchedule.linear(4, 0.1, 0.99)
    p0 = Tensor(np.full((200, 200), 1.5))
    for t in range(1, 5):
        noisy = forward_noise(p0, t, Tensor(rng.standard_normal((200, 200))), sched).data
        assert noisy.mean() == pytest.approx(1.5 * np.sqrt(sched.alpha_bar[t]), abs=0.02)
        assert noisy.var() == pytest.approx(1.0 - sched.alpha_bar[t], rel=0.05, abs=0.01)


def test_forward_noise_rejects_timestep_zero(rng):
    sched = DiffusionSchedule.linear(4, 0.1, 0.99)
    p0 = Tensor(rng.standard_normal(SHAPE))
    with pytest.raises(ValueError):
        forward_noise(p0, 0, p0, sched)
    with pytest.raises(DimensionError):
        forward_noise(p0, 1, Tensor(np.zeros((2, 2))), sched)


def test_loss_is_zero_with_exact_noise(rng):
    sched = DiffusionSchedule.linear(4, 0.1, 0.99)
    p0, condition, eps = pair(rng), pair(rng), pair(rng)
    stub = StubPair(TrueNoise(p0.low, sched), TrueNoise(p0.high, sched))
    for t in range(1, 5):
        total, low, high = diffusion_loss(p0, condition, t, eps, stub, sched)
        assert total.item() < 1e-20
        assert total.item() == pytest.approx(low.item() + high.item(), abs=1e-24)


def test_single_step_sampler_recovers_prompt(rng):
    sched = DiffusionSchedule.linear(1, 0.5, 0.5)
    p0, condition = pair(rng), pair(rng)
    stub = StubPair(TrueNoise(p0.low, sched), TrueNoise(p0.high, sched))
    out = sample(condition, stub, sched, seed=11)
    np.testing.assert_allclose(out.low.data, p0.low.data, atol=1e-5)
    np.testing.assert_allclose(out.high.data, p0.high.data, atol=1e-5)


def test_multi_step_sampler_recovers_prompt(rng):
    sched = DiffusionSchedule.linear(4, 0.1, 0.99)
    p0, condition = pair(rng), pair(rng)
    stub = StubPair(TrueNoise(p0.low, sched), TrueNoise(p0.high, sched))
    out = sample(condition, stub, sched, seed=3)
    np.testing.assert_allclose(out.low.data, p0.low.data, atol=1e-5)


def test_subtract_sampler_subtracts_predictions(rng):
    sched = DiffusionSchedule.linear(4, 0.1, 0.99)
    condition = pair(rng)
    start = pair(rng)
    stub = StubPair(ZeroNoise(), ZeroNoise())
    out = sample(condition, stub, sched, seed=0, sampler=Sampler.SUBTRACT, start=start)
    np.testing.assert_array_equal(out.low.data, start.low.data)


def test_start_noise_order_low_before_high(rng):
    sched = DiffusionSchedule.linear(4, 0.1, 0.99)
    condition = pair(rng)
    stub = StubPair(ZeroNoise(), ZeroNoise())
    out = sample(condition, stub, sched, seed=5, sampler=Sampler.SUBTRACT)
    draws = np.random.default_rng(5)
    np.testing.assert_array_equal(out.low.data, draws.standard_normal(SHAPE))
    np.testing.assert_array_equal(out.high.data, draws.standard_normal(SHAPE))


def test_sampling_is_reproducible(rng):
    prompt = PromptConfig(num_tokens=4, token_dim=8)
    cfg = DiffusionConfig(hidden_layers=2, width_multiplier=1)
    sched = DiffusionSchedule.from_config(cfg)
    denoisers = StubPair(Denoiser(prompt, cfg, rng), Denoiser(prompt, cfg, rng))
    condition = pair(rng)
    a = sample(condition, denoisers, sched, seed=9)
    b = sample(condition, denoisers, sched, seed=9)
    c = sample(condition, denoisers, sched, seed=10)
    np.testing.assert_array_equal(a.low.data, b.low.data)
    np.testing.assert_array_equal(a.high.data, b.high.data)
    assert not np.array_equal(a.low.data, c.low.data)


def test_denoiser_shapes_and_timesteps(rng):
    prompt = PromptConfig(num_tokens=4, token_dim=8)
    cfg = DiffusionConfig(hidden_layers=2, width_multiplier=2)
    denoiser = Denoiser(prompt, cfg, rng)
    assert denoiser.hidden[0].weight.shape == (2 * 32 + 4, 64)
    x = Tensor(rng.standard_normal(SHAPE))
    assert denoiser(x, x, 4).shape == SHAPE
    with pytest.raises(ValueError):
        denoiser(x, x, 5)
    with pytest.raises(DimensionError):
        denoiser(Tensor(np.zeros((2, 8))), x, 1)


def test_gradients_reach_denoisers_through_sampling(rng):
    prompt = PromptConfig(num_tokens=4, token_dim=8)
    cfg = DiffusionConfig(hidden_layers=2, width_multiplier=1)
    denoisers = StubPair(Denoiser(prompt, cfg, rng), Denoiser(prompt, cfg, rng))
    condition = pair(rng)
    out = sample(condition, denoisers, DiffusionSchedule.from_config(cfg), seed=1)
    backward(ops.add(ops.sum(out.low), ops.sum(out.high)))
    assert denoisers.low.head.weight.grad is not None
    assert np.any(denoisers.high.head.weight.grad != 0)


def test_draw_noise_dtype(rng):
    assert draw_noise(rng, SHAPE).dtype == np.float32
