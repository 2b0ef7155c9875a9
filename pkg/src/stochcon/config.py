"""Run configuration: one JSON file describes one reproducible run.

The config hash is the sha256 digest of the canonical serialization
(sorted keys, compact separators); every artifact a run emits carries it.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .data import AugmentationFamily
from .exceptions import DataError, ParameterError
from .model import StochConConfig

__all__ = ["DataConfig", "TrainConfig", "RunConfig", "config_hash", "load_config", "save_config"]


@dataclass
class DataConfig:
    kind: str = "blobs"          # blobs | file
    num_classes: int = 3
    n_per_class: int = 64
    test_per_class: int = 64
    image_size: int = 16
    channels: int = 1
    planted_bits: int = 3
    patch_size: int = 3
    noise: float = 0.18
    background: float = 0.25
    patch_boost: float = 0.55
    train_path: str | None = None
    test_path: str | None = None

    def __post_init__(self):
        if self.kind not in ("blobs", "file"):
            raise ParameterError(f"unknown data kind {self.kind!r}")
        if self.kind == "file" and (self.train_path is None or self.test_path is None):
            raise ParameterError("file datasets need train_path and test_path")


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    optimizer: str = "lars"      # lars | sgd | adam
    base_lr: float = 2.0
    momentum: float = 0.9
    weight_decay: float = 1e-6
    trust_coeff: float = 0.001
    lr_schedule: str = "warmup_cosine"
    warmup_frac: float = 0.1
    checkpoint_every: int = 0    # epochs between checkpoints; 0 = final only

    def __post_init__(self):
        if self.optimizer not in ("lars", "sgd", "adam"):
            raise ParameterError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 0 or self.batch_size < 2:
            raise ParameterError("epochs must be >= 0 and batch_size >= 2")


@dataclass
class RunConfig:
    seed: int = 0
    model: StochConConfig = field(default_factory=StochConConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentationFamily = field(default_factory=AugmentationFamily)

    def __post_init__(self):
        expected = self.data.image_size ** 2 * self.data.channels
        if self.model.input_dim != expected:
            raise ParameterError(
                f"model.input_dim={self.model.input_dim} does not match "
                f"{self.data.image_size}x{self.data.image_size}x{self.data.channels} images"
            )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        try:
            model = StochConConfig(**raw.get("model", {}))
            data = DataConfig(**raw.get("data", {}))
            train = TrainConfig(**raw.get("train", {}))
            augment_raw = dict(raw.get("augment", {}))
            for key in ("global_scale", "local_scale"):
                if key in augment_raw:
                    augment_raw[key] = tuple(augment_raw[key])
            augment = AugmentationFamily(**augment_raw)
        except TypeError as exc:
            raise ParameterError(f"bad config field: {exc}") from exc
        return cls(seed=int(raw.get("seed", 0)), model=model, data=data, train=train, augment=augment)


def config_hash(config: RunConfig | dict) -> str:
    raw = config.to_dict() if isinstance(config, RunConfig) else config
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise DataError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"config file is not valid JSON: {path} ({exc})") from exc
    return RunConfig.from_dict(raw)


def save_config(path, config: RunConfig) -> None:
    with open(path, "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
