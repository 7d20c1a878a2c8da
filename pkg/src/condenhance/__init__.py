"""Reference-conditioned low-light image enhancement on a small numpy autodiff engine."""

from .autodiff import Tensor, no_grad
from .inference import enhance, enhance_image
from .networks import ArchConfig, GeneratorBundle, generator, init_params, param_count
from .train import TrainConfig, run_training

__all__ = [
    "ArchConfig",
    "GeneratorBundle",
    "Tensor",
    "TrainConfig",
    "enhance",
    "enhance_image",
    "generator",
    "init_params",
    "no_grad",
    "param_count",
    "run_training",
]
