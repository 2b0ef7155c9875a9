"""Stochastic contrastive pretraining with latent-variable bottlenecks."""

from .analysis import (
    LinearProbe,
    active_bit_count,
    aggregate_variance,
    compression_ratio,
    f1_vs_units,
    finetune,
    linear_probe,
    macro_f1,
)
from .config import RunConfig, config_hash, load_config, save_config
from .data import AugmentationFamily, Dataset, make_synthetic_blobs, stratified_kfold
from .distributions import GumbelBernoulli, IsoGaussian, TemperatureSchedule, harden
from .estimator import StochConEncoder
from .forest import RandomForestClassifier
from .model import StochConConfig, StochConModel, SupervisedBernoulli
from .objective import InfoNCEConfig, ViewBatch, cosine_sim, infonce_loss
from .optim import LARS, Adam, LRSchedule, SGDMomentum
from .tensor import Tensor
from .train import pretrain

from ._version import __version__

__all__ = [
    "AugmentationFamily",
    "Adam",
    "Dataset",
    "GumbelBernoulli",
    "InfoNCEConfig",
    "IsoGaussian",
    "LARS",
    "LRSchedule",
    "LinearProbe",
    "RandomForestClassifier",
    "RunConfig",
    "SGDMomentum",
    "StochConConfig",
    "StochConEncoder",
    "StochConModel",
    "SupervisedBernoulli",
    "TemperatureSchedule",
    "Tensor",
    "ViewBatch",
    "active_bit_count",
    "aggregate_variance",
    "compression_ratio",
    "config_hash",
    "cosine_sim",
    "f1_vs_units",
    "finetune",
    "harden",
    "infonce_loss",
    "linear_probe",
    "load_config",
    "macro_f1",
    "make_synthetic_blobs",
    "pretrain",
    "save_config",
    "stratified_kfold",
    "__version__",
]
