import numpy as np
import pytest

from app.core.exceptions import DimensionError
from app.models.pipeline import ReflectionModel, micro_config
from app.models.promptformer import PromptFormer
from app.models.prompts import FrequencyPromptPair
from app.schemas.model import ModelConfig, PiimMode, Preset, PromptConfig, PromptFormerConfig, PromptRouting
from app.tensor import Tensor


def random_prompts(rng, prompt: PromptConfig) -> FrequencyPromptPair:
    shape = (prompt.num_tokens, prompt.token_dim)
    return FrequencyPromptPair(
        low=Tensor(rng.standard_normal(shape).astype(np.float32)),
        high=Tensor(rng.standard_normal(shape).astype(np.float32)),
    )


def test_identity_at_init_desk(rng):
    cfg = ModelConfig.from_preset(Preset.DESK)
    restorer = PromptFormer(cfg.promptformer, cfg.prompt, np.random.default_rng(7))
    image = Tensor(rng.uniform(size=(3, 64, 64)).astype(np.float32))
    out = restorer.restore(image, random_prompts(rng, cfg.prompt))
    assert np.max(np.abs(out.data - image.data)) < 1e-6


def test_desk_restorer_is_small():
    cfg = ModelConfig.from_preset(Preset.DESK)
    restorer = PromptFormer(cfg.promptformer, cfg.prompt, np.random.default_rng(7))
    assert restorer.num_parameters() < 1_000_000


def test_stage_channels_double():
    cfg = PromptFormerConfig(base_channels=8, stage_blocks=[1, 1, 1], stage_heads=[1, 2, 2])
    assert [cfg.stage_channels(level) for level in range(3)] == [8, 16, 32]
    assert cfg.size_multiple == 4


def test_heads_must_divide_stage_channels():
    with pytest.raises(ValueError):
        PromptFormerConfig(base_channels=6, stage_blocks=[1, 1], stage_heads=[4, 1])


def test_restore_rejects_indivisible_sizes(rng):
    cfg = micro_config()
    restorer = PromptFormer(cfg.promptformer, cfg.prompt, rng)
    with pytest.raises(DimensionError):
        restorer.restore(Tensor(np.zeros((3, 20, 16), dtype=np.float32)), random_prompts(rng, cfg.prompt))
    with pytest.raises(DimensionError):
        restorer.restore(Tensor(np.zeros((1, 16, 16), dtype=np.float32)), random_prompts(rng, cfg.prompt))


def test_prompt_routing(rng):
    cfg = micro_config()
    prompts = random_prompts(rng, cfg.prompt)
    split = PromptFormer(cfg.promptformer, cfg.prompt, rng)
    msa, ffn = split.route(prompts)
    assert msa is prompts.low and ffn is prompts.high

    both_cfg = cfg.promptformer.model_copy(update={"prompt_routing": PromptRouting.BOTH_EVERYWHERE})
    both = PromptFormer(both_cfg, cfg.prompt, rng)
    assert both.tokens_per_module == 2 * cfg.prompt.num_tokens
    msa, ffn = both.route(prompts)
    assert msa.shape == (2 * cfg.prompt.num_tokens, cfg.prompt.token_dim)
    image = Tensor(rng.uniform(size=(3, 16, 16)).astype(np.float32))
    assert both.restore(image, prompts).shape == image.shape


def test_prompts_change_output_once_trained(rng):
    model = ReflectionModel(micro_config(), seed=7)
    output = model.restorer.output
    output.weight.data = rng.normal(0.0, 0.1, size=output.weight.shape).astype(np.float32)
    image = Tensor(rng.uniform(size=(3, 16, 16)).astype(np.float32))
    a = model.restorer.restore(image, random_prompts(rng, model.cfg.prompt))
    b = model.restorer.restore(image, random_prompts(rng, model.cfg.prompt))
    assert not np.allclose(a.data, b.data)


def test_trunk_mode_leaves_extractor_inject_only(rng):
    cfg = micro_config()
    off = cfg.promptformer.model_copy(update={"piim_mode": PiimMode.OFF})
    restorer = PromptFormer(off, cfg.prompt, rng)
    assert restorer.extractor[0].pmsa.piim.mode == PiimMode.INJECT_ONLY
    assert restorer.latent[0].pmsa.piim.mode == PiimMode.OFF
