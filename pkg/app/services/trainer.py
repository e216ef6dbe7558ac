"""
Training service module: pre-training, diffusion training and joint training.

Every stage runs the same loop. A batch is processed one sample at a time
in a fixed order, the batch loss is the mean of the per-sample losses, and
one optimizer step follows each batch.
"""

import logging
import math
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from app.core.exceptions import TrainingDivergedError
from app.models.diffusion import DenoiserPair, diffusion_loss, draw_noise, sample
from app.models.pipeline import ReflectionModel
from app.models.prompts import FrequencyPromptPair
from app.schemas.model import PromptGenerator
from app.schemas.train import RunConfig, Stage, StageResult, StepRecord
from app.services.checkpoint import load_model, save_model
from app.services.data import ImagePair, sample_batch
from app.services.optim import Adam, AdamW
from app.tensor import Tensor, backward, no_grad, ops

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.jsonl"
CHECKPOINT_NAMES = {
    Stage.PRETRAIN: "pretrain.ckpt",
    Stage.DIFFUSION: "diffusion.ckpt",
    Stage.JOINT: "joint.ckpt",
}
STAGE_SEED_OFFSET = {Stage.PRETRAIN: 0, Stage.DIFFUSION: 1, Stage.JOINT: 2}

# l1, ldiff_l, ldiff_h for one sample; absent terms are None
Losses = Dict[str, Optional[Tensor]]
SampleStep = Callable[[ImagePair], Losses]

COMPONENTS = ("l1", "ldiff_l", "ldiff_h")


class Trainer:
    """
    Runs the three training stages on one model.

    Args:
        run: Run configuration
        pairs: Training pairs
        out_dir: Directory receiving checkpoints and ``metrics.jsonl``
        model: Model to train; a fresh one seeded from ``run.train.seed`` by default
    """

    def __init__(self, run: RunConfig, pairs: List[ImagePair], out_dir: Path,
                 model: Optional[ReflectionModel] = None):
        self.run = run
        self.pairs = pairs
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.model = model or ReflectionModel(run.model, seed=run.train.seed)
        self.denoisers: DenoiserPair = self.model.denoisers
        self.rng = np.random.default_rng(run.train.seed)

    @property
    def metrics_path(self) -> Path:
        return self.out_dir / METRICS_FILE

    def _record(self, record: StepRecord) -> None:
        with self.metrics_path.open("a", encoding="utf-8") as fh:
            fh.write(record.model_dump_json() + "\n")

    def _reseed(self, stage: Stage) -> None:
        self.rng = np.random.default_rng([self.run.train.seed, STAGE_SEED_OFFSET[stage]])

    def loop(self, stage: Stage, optimizer: Adam, step: SampleStep, iterations: int) -> List[StepRecord]:
        """
        Shared optimisation loop.

        Raises:
            TrainingDivergedError: If any loss component is NaN or infinite
        """
        train = self.run.train
        records: List[StepRecord] = []
        for iteration in range(1, iterations + 1):
            batch = sample_batch(self.pairs, train.batch_size, train.patch_size, self.rng)
            per_sample = [step(pair) for pair in batch]
            components: Dict[str, Optional[Tensor]] = {}
            for name in COMPONENTS:
                terms = [losses[name] for losses in per_sample if losses.get(name) is not None]
                components[name] = ops.mean_of(terms) if terms else None
            values = {name: (t.item() if t is not None else 0.0) for name, t in components.items()}
            if not all(math.isfinite(v) for v in values.values()):
                raise TrainingDivergedError(stage.value, iteration, values)

            present = [t for t in components.values() if t is not None]
            total = present[0]
            for term in present[1:]:
                total = ops.add(total, term)
            optimizer.zero_grad()
            backward(total)
            optimizer.step()

            record = StepRecord(
                stage=stage,
                step=iteration,
                l1=values["l1"],
                ldiff_l=values["ldiff_l"],
                ldiff_h=values["ldiff_h"],
                total=values["l1"] + values["ldiff_l"] + values["ldiff_h"],
            )
            records.append(record)
            self._record(record)
            if iteration == 1 or iteration % train.log_every == 0 or iteration == iterations:
                logger.info(
                    "stage=%s step=%d L1=%.6f Ldiff_l=%.6f Ldiff_h=%.6f total=%.6f",
                    stage.value, iteration, record.l1, record.ldiff_l, record.ldiff_h, record.total,
                )
        return records

    def _finish(self, stage: Stage, iterations: int, records: List[StepRecord]) -> StageResult:
        path = save_model(
            self.out_dir / CHECKPOINT_NAMES[stage], self.model, stage.value, iterations, self.run.train.seed
        )
        return StageResult(stage=stage, checkpoint=str(path), iterations=iterations, records=records)

    def _iterations(self, stage: Stage, iterations: Optional[int]) -> int:
        if iterations is not None:
            return iterations
        return self.run.train.iterations_for(stage, self.run.model.preset)

    # stage 1

    def pretrain_step(self, pair: ImagePair) -> Losses:
        prompts = self.model.pretrain_prompts(pair.input_q, pair.gt_b)
        restored = self.model.restorer.restore(pair.input_q, prompts)
        return {"l1": ops.l1_loss(restored, pair.gt_b)}

    def pretrain(self, iterations: Optional[int] = None) -> StageResult:
        """Train FPE_pre and the restorer on the L1 restoration loss with AdamW."""
        stage = Stage.PRETRAIN
        iterations = self._iterations(stage, iterations)
        self._reseed(stage)
        params = {**self.model.fpe_pre.trainable("fpe_pre."), **self.model.restorer.trainable("restorer.")}
        optimizer = AdamW(params, lr=self.run.train.learning_rate, weight_decay=self.run.train.weight_decay)
        logger.info("pretrain: %d iterations over %d trainable tensors", iterations, len(params))
        records = self.loop(stage, optimizer, self.pretrain_step, iterations)
        return self._finish(stage, iterations, records)

    # stage 2

    def _target_prompts(self, pair: ImagePair) -> FrequencyPromptPair:
        with no_grad():
            return self.model.pretrain_prompts(pair.input_q, pair.gt_b)

    def _prompt_losses(self, target: FrequencyPromptPair, condition: FrequencyPromptPair) -> Losses:
        """Diffusion losses, or direct regression of FPE_con onto FPE_pre without diffusion."""
        if self.run.model.prompt_generator == PromptGenerator.DIRECT:
            return {
                "ldiff_l": ops.mse_loss(condition.low, target.low),
                "ldiff_h": ops.mse_loss(condition.high, target.high),
            }
        t = int(self.rng.integers(1, self.model.schedule.timesteps + 1))
        eps = FrequencyPromptPair(
            low=draw_noise(self.rng, target.shape, target.low.dtype),
            high=draw_noise(self.rng, target.shape, target.high.dtype),
        )
        _, low, high = diffusion_loss(target, condition, t, eps, self.denoisers, self.model.schedule)
        return {"ldiff_l": low, "ldiff_h": high}

    def diffusion_step(self, pair: ImagePair) -> Losses:
        target = self._target_prompts(pair)
        condition = self.model.condition_prompts(pair.input_q)
        return self._prompt_losses(target, condition)

    def _generator_params(self) -> Dict[str, Tensor]:
        params = dict(self.model.fpe_con.trainable("fpe_con."))
        if self.run.model.prompt_generator == PromptGenerator.DIFFUSION:
            params.update(self.model.denoiser_l.trainable("denoiser_l."))
            params.update(self.model.denoiser_h.trainable("denoiser_h."))
        return params

    def train_diffusion(self, iterations: Optional[int] = None) -> StageResult:
        """Freeze FPE_pre and train FPE_con plus both denoisers with Adam."""
        stage = Stage.DIFFUSION
        iterations = self._iterations(stage, iterations)
        self._reseed(stage)
        self.model.fpe_pre.requires_grad_(False)
        params = self._generator_params()
        optimizer = Adam(params, lr=self.run.train.learning_rate)
        logger.info("diffusion: %d iterations over %d trainable tensors", iterations, len(params))
        records = self.loop(stage, optimizer, self.diffusion_step, iterations)
        return self._finish(stage, iterations, records)

    # stage 3

    def joint_step(self, pair: ImagePair) -> Losses:
        target = self._target_prompts(pair)
        condition = self.model.condition_prompts(pair.input_q)
        losses = self._prompt_losses(target, condition)
        if self.run.model.prompt_generator == PromptGenerator.DIRECT:
            prompts = condition
        else:
            seed = int(self.rng.integers(0, 2 ** 31 - 1))
            prompts = sample(condition, self.denoisers, self.model.schedule, seed,
                             sampler=self.run.model.diffusion.sampler)
        if self.run.train.detach_prompts:
            prompts = prompts.detach()
        restored = self.model.restorer.restore(pair.input_q, prompts)
        losses["l1"] = ops.l1_loss(restored, pair.gt_b)
        return losses

    def train_joint(self, iterations: Optional[int] = None) -> StageResult:
        """Train the restorer, FPE_con and the denoisers on L1 + both diffusion losses."""
        stage = Stage.JOINT
        iterations = self._iterations(stage, iterations)
        self._reseed(stage)
        if self.run.train.reinit_restorer:
            logger.info("joint: reinitialising the restorer")
            self.model.reinit_restorer(self.run.train.seed + STAGE_SEED_OFFSET[stage])
        self.model.fpe_pre.requires_grad_(False)
        params = {**self._generator_params(), **self.model.restorer.trainable("restorer.")}
        optimizer = Adam(params, lr=self.run.train.learning_rate)
        logger.info("joint: %d iterations over %d trainable tensors", iterations, len(params))
        records = self.loop(stage, optimizer, self.joint_step, iterations)
        return self._finish(stage, iterations, records)


def _resume(run: RunConfig, pairs: List[ImagePair], out_dir: Path, checkpoint: Path) -> Trainer:
    model, _ = load_model(checkpoint, expected=run.model)
    return Trainer(run, pairs, out_dir, model=model)


def stage_pretrain(run: RunConfig, pairs: List[ImagePair], out_dir: Path,
                   iterations: Optional[int] = None) -> StageResult:
    """
    Stage 1 from a freshly initialised model.

    Args:
        run: Run configuration
        pairs: Training pairs
        out_dir: Output directory
        iterations: Override of the preset's iteration count

    Returns:
        StageResult with the checkpoint path and per-step records
    """
    return Trainer(run, pairs, out_dir).pretrain(iterations)


def stage_diffusion(run: RunConfig, pairs: List[ImagePair], out_dir: Path, checkpoint: Path,
                    iterations: Optional[int] = None) -> StageResult:
    """Stage 2, resuming from a pre-training checkpoint of the same preset and configuration."""
    return _resume(run, pairs, out_dir, checkpoint).train_diffusion(iterations)


def stage_joint(run: RunConfig, pairs: List[ImagePair], out_dir: Path, checkpoint: Path,
                iterations: Optional[int] = None) -> StageResult:
    """Stage 3, resuming from a diffusion-stage checkpoint of the same preset and configuration."""
    return _resume(run, pairs, out_dir, checkpoint).train_joint(iterations)
