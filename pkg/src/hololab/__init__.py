"""hololab: a desk-scale, testable two-branch garment video diffusion stack.

Subpackages: world (procedural data), model (the denoiser), plus modules
for diffusion math, training, atlas finetuning, metrics, reporting, and
the CLI.
"""

from . import atlas, diffusion, metrics, training, world
from .diffusion import GuidanceWeights, NoiseSchedule, desk_schedule, make_schedule
from .model import GarmentVDM, ModelConfig, build_model, desk_config, micro_config

__version__ = "0.1.0"

__all__ = [
    "atlas",
    "diffusion",
    "metrics",
    "training",
    "world",
    "GuidanceWeights",
    "NoiseSchedule",
    "desk_schedule",
    "make_schedule",
    "GarmentVDM",
    "ModelConfig",
    "build_model",
    "desk_config",
    "micro_config",
    "__version__",
]
