"""Pretraining loop with manifests, checkpoints, and bitwise-reproducible resume.

Every source of randomness is a stream derived from (seed, purpose, ...),
so a run is a pure function of its config: example order and augmentations
depend only on (seed, epoch, example index), and the latent-sampling
generator state is checkpointed. Repeating a run reproduces the manifest
byte for byte; resuming from a checkpoint continues the uninterrupted
trajectory exactly. Wall-clock timings go to a separate file so the
manifest itself stays deterministic.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._version import __version__
from .analysis import active_bit_count, aggregate_variance
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, config_hash
from .data import Dataset, epoch_order, load_dataset, make_synthetic_blobs, make_views
from .distributions import TemperatureSchedule, temperature_at
from .exceptions import DataError, NumericalFailure
from .model import StochConModel
from .optim import LRSchedule, lr_at, make_optimizer

__all__ = ["TrainResult", "build_datasets", "pretrain", "pretrain_on_dataset", "run_lock"]

STREAM_LATENT = 105

CHECKPOINT_FINAL = "checkpoint_final.sck"
MANIFEST_NAME = "manifest.jsonl"
TIMING_NAME = "timing.json"
LOCK_NAME = ".lock"


@dataclass
class TrainResult:
    model: StochConModel
    manifest: list
    checkpoint_path: Path | None
    config_hash: str
    final_loss: float | None


class run_lock:
    """Exclusive ownership of a run directory for the duration of a run."""

    def __init__(self, out_dir: Path):
        self.path = Path(out_dir) / LOCK_NAME

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise DataError(
                f"run directory is locked by another run: {self.path}; "
                "remove the lock file if that run is dead"
            )
        os.close(fd)
        return self

    def __exit__(self, *exc):
        try:
            os.unlink(self.path)
        except FileNotFoundError:
            pass
        return False


def build_datasets(config: RunConfig):
    """Construct (train, test) datasets described by the config."""
    d = config.data
    if d.kind == "file":
        return load_dataset(d.train_path, split="train"), load_dataset(d.test_path, split="test")
    common = dict(
        num_classes=d.num_classes,
        image_size=d.image_size,
        planted_bits=d.planted_bits,
        patch_size=d.patch_size,
        seed=config.seed,
        noise=d.noise,
        background=d.background,
        patch_boost=d.patch_boost,
    )
    train = make_synthetic_blobs(n_per_class=d.n_per_class, split="train", **common)
    test = make_synthetic_blobs(n_per_class=d.test_per_class, split="test", **common)
    return train, test


def _epoch_stats(model: StochConModel, dataset: Dataset, step: int) -> dict:
    if model.config.distribution == "bernoulli":
        bits = active_bit_count(model, dataset, step=step)
        return {"bit_mean": bits.mean, "bit_std": bits.std}
    if model.config.distribution == "gaussian":
        var = aggregate_variance(model, dataset, step=step)
        return {"aggregate_variance": var.aggregate}
    return {}


def _batches(order: np.ndarray, batch_size: int):
    for start in range(0, order.size, batch_size):
        chunk = order[start:start + batch_size]
        if chunk.size >= 2:  # a contrastive batch needs at least two examples
            yield chunk


def pretrain(config: RunConfig, out_dir=None, resume_from=None,
             stop_after_epoch=None) -> TrainResult:
    """Full pretraining entry point: build data from the config and train."""
    train_ds, _ = build_datasets(config)
    resume = load_checkpoint(resume_from) if resume_from else None
    return pretrain_on_dataset(config, train_ds, out_dir=out_dir, resume=resume,
                               stop_after_epoch=stop_after_epoch)


def pretrain_on_dataset(config: RunConfig, dataset: Dataset, out_dir=None,
                        resume: Checkpoint | None = None,
                        stop_after_epoch: int | None = None) -> TrainResult:
    model = StochConModel(config.model, seed=config.seed)
    optimizer = _make_optimizer(config, model)
    latent_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence((int(config.seed), STREAM_LATENT)))
    )

    n = len(dataset)
    steps_per_epoch = sum(1 for _ in _batches(np.arange(n), config.train.batch_size))
    if steps_per_epoch == 0:
        raise DataError("dataset too small for one contrastive batch")
    total_steps = max(1, config.train.epochs * steps_per_epoch)
    lr_sched = LRSchedule(
        kind=config.train.lr_schedule,
        base_lr=config.train.base_lr,
        warmup_steps=int(config.train.warmup_frac * total_steps),
        total_steps=total_steps,
    )
    temp_sched = TemperatureSchedule(
        start=config.model.temp_start, end=config.model.temp_end, total_steps=total_steps
    )

    start_epoch, step = 0, 0
    if resume is not None:
        model.load_parameters(resume.params)
        if resume.optimizer_state is not None:
            optimizer.load_state_dict(resume.optimizer_state)
        if resume.rng_state is not None:
            latent_rng.bit_generator.state = resume.rng_state
        start_epoch, step = resume.epoch, resume.step

    run_hash = config_hash(config)
    last_epoch = config.train.epochs
    if stop_after_epoch is not None:
        last_epoch = min(last_epoch, int(stop_after_epoch))
    out_path = None
    manifest_fh = None
    lock = None
    if out_dir is not None:
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)
        lock = run_lock(out_path)
        lock.__enter__()
        manifest_fh = open(out_path / MANIFEST_NAME, "a")

    manifest: list = []

    def emit(record: dict):
        manifest.append(record)
        if manifest_fh is not None:
            manifest_fh.write(json.dumps(record, sort_keys=True) + "\n")
            manifest_fh.flush()

    started = time.time()
    final_loss = None
    try:
        if resume is None:
            emit({"type": "run", "config_hash": run_hash, "code_version": __version__,
                  "config": config.to_dict()})
            emit({"type": "epoch", "epoch": 0, "step": 0, "loss": None,
                  "lr": lr_at(0, lr_sched), "temperature": temperature_at(0, temp_sched),
                  **_epoch_stats(model, dataset, 0)})

        for epoch in range(start_epoch, last_epoch):
            order = epoch_order(n, config.seed, epoch)
            losses = []
            for batch_idx in _batches(order, config.train.batch_size):
                temp = temperature_at(min(step, total_steps), temp_sched)
                optimizer.lr = lr_at(min(step, total_steps), lr_sched)
                views = make_views(
                    dataset.images[batch_idx], batch_idx, config.augment,
                    config.model.n_global, config.model.n_local, config.seed, epoch,
                )
                model.zero_grad()
                loss = model.pretrain_loss(views, temperature=temp, rng=latent_rng)
                if not np.isfinite(loss.data).all():
                    raise NumericalFailure("non-finite pretraining loss", step=step)
                loss.backward()
                optimizer.step()
                losses.append(loss.item())
                step += 1
            final_loss = float(np.mean(losses))
            emit({"type": "epoch", "epoch": epoch + 1, "step": step, "loss": final_loss,
                  "lr": optimizer.lr, "temperature": temperature_at(min(step, total_steps), temp_sched),
                  **_epoch_stats(model, dataset, step)})
            every = config.train.checkpoint_every
            if out_path is not None and every > 0 and (epoch + 1) % every == 0:
                _save(out_path / f"checkpoint_ep{epoch + 1:04d}.sck", config, model,
                      optimizer, latent_rng, step, epoch + 1)

        checkpoint_path = None
        if out_path is not None:
            checkpoint_path = out_path / CHECKPOINT_FINAL
            _save(checkpoint_path, config, model, optimizer, latent_rng, step, last_epoch)
            with open(out_path / TIMING_NAME, "w") as fh:
                json.dump({"wall_clock_seconds": time.time() - started,
                           "config_hash": run_hash}, fh, indent=2)
    finally:
        if manifest_fh is not None:
            manifest_fh.close()
        if lock is not None:
            lock.__exit__(None, None, None)

    return TrainResult(model=model, manifest=manifest, checkpoint_path=checkpoint_path,
                       config_hash=run_hash, final_loss=final_loss)


def _make_optimizer(config: RunConfig, model: StochConModel):
    kind = config.train.optimizer
    kwargs = {"lr": config.train.base_lr}
    if kind in ("sgd", "lars"):
        kwargs["momentum"] = config.train.momentum
    if kind == "lars":
        kwargs["weight_decay"] = config.train.weight_decay
        kwargs["trust_coeff"] = config.train.trust_coeff
    return make_optimizer(kind, model.named_parameters(), **kwargs)


def _save(path, config, model, optimizer, latent_rng, step, epoch):
    save_checkpoint(
        path,
        config=config.to_dict(),
        params={k: v.data for k, v in model.named_parameters().items()},
        optimizer_state=optimizer.state_dict(),
        rng_state=latent_rng.bit_generator.state,
        step=step,
        epoch=epoch,
    )
