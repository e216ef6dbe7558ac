"""Network models module."""

from app.models.diffusion import Denoiser, DiffusionSchedule
from app.models.fpe import FrequencyPromptEncoder
from app.models.pipeline import ReflectionModel
from app.models.prompts import FrequencyPromptPair
from app.models.promptformer import PromptFormer
