import numpy as np
import pytest

from app.core.exceptions import DimensionError
from app.models.fpe import FrequencyPromptEncoder
from app.models.prompts import FrequencyPromptPair, PromptKind
from app.schemas.model import FPEConfig, PromptConfig
from app.tensor import Tensor, gradcheck, ops

PROMPT = PromptConfig(num_tokens=4, token_dim=8)
FPE = FPEConfig(channels=4, res_blocks=1, hidden=8)


def test_branch_input_channels(rng):
    fpe = FrequencyPromptEncoder(2, FPE, PROMPT, rng)
    assert fpe.low.stem.weight.shape[1] == 6
    assert fpe.high.stem.weight.shape[1] == 18


def test_encode_shapes(rng):
    fpe = FrequencyPromptEncoder(2, FPE, PROMPT, rng)
    prompts = fpe(Tensor(rng.uniform(size=(6, 8, 8)).astype(np.float32)))
    assert isinstance(prompts, FrequencyPromptPair)
    assert prompts.shape == (4, 8)
    assert [kind for kind, _ in prompts.items()] == [PromptKind.LOW_FREQ, PromptKind.HIGH_FREQ]


def test_encode_rejects_wrong_channels_and_odd_sizes(rng):
    fpe = FrequencyPromptEncoder(1, FPE, PROMPT, rng)
    with pytest.raises(DimensionError):
        fpe.encode(Tensor(np.zeros((6, 8, 8), dtype=np.float32)))
    with pytest.raises(DimensionError):
        fpe.encode(Tensor(np.zeros((3, 7, 8), dtype=np.float32)))


def test_low_branch_ignores_high_frequencies(rng):
    fpe = FrequencyPromptEncoder(1, FPE, PROMPT, rng)
    base = rng.uniform(size=(3, 8, 8))
    # a checkerboard has an hh band only
    checker = 0.1 * (np.indices((8, 8)).sum(axis=0) % 2 * 2 - 1)
    a = fpe.encode(Tensor(base))
    b = fpe.encode(Tensor(base + checker[None]))
    np.testing.assert_allclose(a.low.data, b.low.data, atol=1e-10)
    assert not np.allclose(a.high.data, b.high.data)


def test_prompt_pair_validation():
    with pytest.raises(DimensionError):
        FrequencyPromptPair(low=Tensor(np.zeros((2, 3))), high=Tensor(np.zeros((3, 3))))
    with pytest.raises(DimensionError):
        FrequencyPromptPair(low=Tensor(np.zeros(3)), high=Tensor(np.zeros(3)))
    pair = FrequencyPromptPair(low=Tensor(np.zeros((2, 3))), high=Tensor(np.ones((2, 3))))
    assert pair.tokens().shape == (4, 3)


def test_encoder_gradients(rng):
    fpe = FrequencyPromptEncoder(1, FPE, PROMPT, np.random.default_rng(3))
    image = Tensor(rng.uniform(size=(3, 8, 8)))
    w_low = rng.standard_normal((4, 8))
    w_high = rng.standard_normal((4, 8))

    def loss():
        prompts = fpe(image)
        return ops.add(ops.sum(ops.mul(prompts.low, w_low)), ops.sum(ops.mul(prompts.high, w_high)))

    report = gradcheck(loss, fpe.trainable(), h=1e-5, tolerance=1e-4, max_coords=300, rng=rng)
    assert report.ok, report.summary()
