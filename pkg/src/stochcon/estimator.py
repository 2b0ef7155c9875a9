"""Scikit-learn estimator facade over self-supervised pretraining.

fit() pretrains the encoder on raw images (labels are ignored); transform()
emits frozen features: backbone activations, bit probabilities, or exact
binary codes. The estimator composes with sklearn pipelines and model
selection via get_params/set_params.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .config import DataConfig, RunConfig, TrainConfig, config_hash
from .data import AugmentationFamily, Dataset
from .exceptions import DimensionError
from .model import StochConConfig
from .train import pretrain_on_dataset
from .validation import check_is_fitted

__all__ = ["StochConEncoder"]


class StochConEncoder(BaseEstimator, TransformerMixin):
    """Self-supervised encoder with an optional stochastic latent bottleneck."""

    def __init__(self, distribution="bernoulli", variant="top", hardness="soft",
                 latent_dim=32, backbone_dim=128, proj_dim=64, hidden_dims=(256, 256),
                 bottleneck=True, variance_source="opposing_view", n_global=2, n_local=2,
                 latent_samples=1, temperature=0.2, epochs=50, batch_size=64,
                 optimizer="lars", base_lr=2.0, output="latent_probs", seed=0):
        self.distribution = distribution
        self.variant = variant
        self.hardness = hardness
        self.latent_dim = latent_dim
        self.backbone_dim = backbone_dim
        self.proj_dim = proj_dim
        self.hidden_dims = hidden_dims
        self.bottleneck = bottleneck
        self.variance_source = variance_source
        self.n_global = n_global
        self.n_local = n_local
        self.latent_samples = latent_samples
        self.temperature = temperature
        self.epochs = epochs
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.base_lr = base_lr
        self.output = output
        self.seed = seed

    @staticmethod
    def _as_images(X) -> np.ndarray:
        X = np.asarray(X)
        if X.ndim != 4:
            raise DimensionError(f"expected images of shape [N, H, W, C], got {X.shape}")
        if X.dtype == np.uint8:
            return X
        if np.issubdtype(X.dtype, np.floating):
            if X.min() < 0.0 or X.max() > 1.0:
                raise DimensionError("float images must lie in [0, 1]")
            return np.round(X * 255.0).astype(np.uint8)
        raise DimensionError(f"unsupported image dtype {X.dtype}")

    def _run_config(self, images: np.ndarray) -> RunConfig:
        n, h, w, c = images.shape
        model = StochConConfig(
            input_dim=h * w * c,
            hidden_dims=tuple(self.hidden_dims),
            backbone_dim=self.backbone_dim,
            proj_dim=self.proj_dim,
            latent_dim=self.latent_dim,
            bottleneck=self.bottleneck,
            distribution=self.distribution,
            variant=self.variant,
            hardness=self.hardness,
            variance_source=self.variance_source,
            n_global=self.n_global,
            n_local=self.n_local,
            latent_samples=self.latent_samples,
            temperature=self.temperature,
        )
        data = DataConfig(image_size=h, channels=c)
        train = TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                            optimizer=self.optimizer, base_lr=self.base_lr)
        return RunConfig(seed=self.seed, model=model, data=data, train=train,
                         augment=AugmentationFamily())

    def fit(self, X, y=None):
        images = self._as_images(X)
        if images.shape[1] != images.shape[2]:
            raise DimensionError("images must be square")
        labels = np.zeros(images.shape[0], dtype=np.int64) if y is None else np.asarray(y, dtype=np.int64)
        dataset = Dataset(images=images, labels=labels,
                          num_classes=int(labels.max()) + 1, split="train")
        config = self._run_config(images)
        result = pretrain_on_dataset(config, dataset)
        self.model_ = result.model
        self.config_hash_ = config_hash(config)
        self.final_loss_ = result.final_loss
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        images = self._as_images(X)
        flat = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
        return self.model_.encode(flat, mode=self.output)
