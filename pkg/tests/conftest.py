from pathlib import Path
from typing import List

import numpy as np
import pytest

from app.models.pipeline import ReflectionModel, micro_config
from app.schemas.model import ModelConfig
from app.schemas.train import RunConfig, SynthSpec, TrainConfig
from app.services.data import ImagePair, procedural_image, synthesize

MICRO_SIZE = 16


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(7)


@pytest.fixture
def micro_cfg() -> ModelConfig:
    return micro_config()


@pytest.fixture
def micro_model(micro_cfg: ModelConfig) -> ReflectionModel:
    return ReflectionModel(micro_cfg, seed=7)


@pytest.fixture
def micro_run(micro_cfg: ModelConfig) -> RunConfig:
    return RunConfig(
        model=micro_cfg,
        train=TrainConfig(batch_size=1, patch_size=MICRO_SIZE, log_every=1, seed=7),
    )


def make_pairs(count: int, size: int, seed: int = 7) -> List[ImagePair]:
    spec = SynthSpec(seed=seed)
    pairs = []
    for index in range(count):
        rng = np.random.default_rng([seed, index])
        b = procedural_image(rng, size, size)
        r = procedural_image(rng, size, size)
        pair = synthesize(b, r, spec, rng)
        pair.name = f"{index:04d}"
        pairs.append(pair)
    return pairs


@pytest.fixture
def micro_pairs() -> List[ImagePair]:
    return make_pairs(2, MICRO_SIZE)


@pytest.fixture
def out_dir(tmp_path: Path) -> Path:
    return tmp_path / "run"
