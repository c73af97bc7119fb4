"""Adversarial scanpath prediction with a Gaussian prior bank, built on a small numpy autodiff."""

from .core import Fixation, MetricReport, ObserverPool, SaliencyMap, Scanpath, normalize_coords, denormalize_coords
from .metrics import congruency, multimatch, nss, synthesize_saliency
from .models import Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, count_parameters, predict_scanpath
from .priors import GaussianPrior, PriorBank, init_bank, render_bank
from .training import TrainConfig, Trainer, TrainItem, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "Fixation",
    "MetricReport",
    "ObserverPool",
    "SaliencyMap",
    "Scanpath",
    "normalize_coords",
    "denormalize_coords",
    "congruency",
    "multimatch",
    "nss",
    "synthesize_saliency",
    "Discriminator",
    "DiscriminatorConfig",
    "Generator",
    "GeneratorConfig",
    "count_parameters",
    "predict_scanpath",
    "GaussianPrior",
    "PriorBank",
    "init_bank",
    "render_bank",
    "TrainConfig",
    "Trainer",
    "TrainItem",
    "load_checkpoint",
    "save_checkpoint",
]
