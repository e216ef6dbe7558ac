"""Gradient audit of the whole pipeline on the smallest complete model."""

import logging
from typing import Optional

import numpy as np

from app.models.diffusion import diffusion_loss
from app.models.pipeline import ReflectionModel, micro_config
from app.models.prompts import FrequencyPromptPair
from app.schemas.model import ModelConfig
from app.tensor import GradcheckReport, Tensor, gradcheck, ops

logger = logging.getLogger(__name__)

OUTPUT_INIT_STD = 0.1


def audit_model(
    base: Optional[ModelConfig] = None,
    seed: int = 7,
    max_coords: Optional[int] = 2000,
    tolerance: float = 1e-3,
    required_fraction: float = 0.999,
) -> GradcheckReport:
    """
    Check analytic gradients of every trainable tensor of a micro model.

    The audited loss sums the three training objectives on one random pair:
    restoration with pre-training prompts, both diffusion terms, and
    restoration with sampled prompts. Squared errors replace L1 so the loss
    is smooth at the finite-difference scale.

    Args:
        base: Configuration whose ablation switches the micro model copies
        seed: Seed of the weights, the data and the coordinate sample
        max_coords: Number of sampled coordinates
        tolerance: Bound on the relative error per coordinate
        required_fraction: Fraction of coordinates that must pass

    Returns:
        GradcheckReport
    """
    cfg = micro_config(base)
    model = ReflectionModel(cfg, seed=seed)
    rng = np.random.default_rng(seed)
    # the zero-initialised output projection would hide every upstream gradient
    output = model.restorer.output
    output.weight.data = rng.normal(0.0, OUTPUT_INIT_STD, size=output.weight.shape)

    size = model.min_size
    image = Tensor(rng.uniform(0.0, 1.0, size=(3, size, size)))
    gt = Tensor(rng.uniform(0.0, 1.0, size=(3, size, size)))
    shape = (cfg.prompt.num_tokens, cfg.prompt.token_dim)
    eps = FrequencyPromptPair(low=Tensor(rng.standard_normal(shape)), high=Tensor(rng.standard_normal(shape)))
    t = model.schedule.timesteps
    params = model.trainable()
    logger.info("auditing %d tensors, %d parameters, %d×%d input",
                len(params), model.num_parameters(), size, size)

    def loss() -> Tensor:
        target = model.pretrain_prompts(image, gt)
        total = ops.mse_loss(model.restorer.restore(image, target), gt)
        condition = model.condition_prompts(image)
        _, low, high = diffusion_loss(target, condition, t, eps, model.denoisers, model.schedule)
        total = ops.add(ops.add(total, low), high)
        prompts = model.generate_prompts(image, seed)
        return ops.add(total, ops.mse_loss(model.restorer.restore(image, prompts), gt))

    return gradcheck(
        loss,
        params,
        tolerance=tolerance,
        max_coords=max_coords,
        required_fraction=required_fraction,
        rng=rng,
    )
