"""Downstream evaluation and analysis on trained encoders.

Covers the frozen linear probe, full finetuning, active-bit counting,
aggregate-variance diagnostics, random-forest feature sweeps, and the
compression arithmetic. Every result dataclass serializes to CSV rows with
a stable, versioned header carrying config hash, seed, and step.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .data import AugmentationFamily, Dataset, make_views, stratified_holdout, stratified_kfold
from .distributions import LOG_VAR_MAX, LOG_VAR_MIN
from .exceptions import ContractError, ParameterError
from .forest import RandomForestClassifier
from .model import Linear, StochConModel, softmax_cross_entropy
from .optim import Adam, LRSchedule, lr_at
from .tensor import Tensor
from .validation import check_X_y, check_array, check_is_fitted

__all__ = [
    "BitStats",
    "FeatureSweepResult",
    "LinearProbe",
    "ProbeResult",
    "VarianceStats",
    "active_bit_count",
    "aggregate_variance",
    "compression_ratio",
    "f1_vs_units",
    "finetune",
    "linear_probe",
    "macro_f1",
    "write_csv",
]

CSV_SCHEMA_VERSION = 1

FINETUNE_TEMPERATURE = 0.1
FINETUNE_LR = 3e-4
FINETUNE_DECAY = 0.1
FINETUNE_DECAY_POINT = 0.8


# ----------------------------------------------------------------------
# linear probe

class LinearProbe(BaseEstimator, ClassifierMixin):
    """Multinomial logistic regression trained with full-batch Adam.

    Zero-initialized weights make fitting deterministic without an RNG;
    the objective is convex, so the start point only affects speed.
    """

    def __init__(self, epochs=150, lr=0.05):
        self.epochs = epochs
        self.lr = lr

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        self.n_features_in_ = X.shape[1]
        w = Tensor(np.zeros((X.shape[1], self.classes_.size)), requires_grad=True)
        b = Tensor(np.zeros(self.classes_.size), requires_grad=True)
        opt = Adam({"w": w, "b": b}, lr=self.lr)
        xt = Tensor(X)
        from .tensor import repeat_rows

        for _ in range(self.epochs):
            opt.zero_grad()
            logits = xt @ w + repeat_rows(b, X.shape[0])
            softmax_cross_entropy(logits, y_enc).backward()
            opt.step()
        self.coef_ = w.data.copy()
        self.intercept_ = b.data.copy()
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return X @ self.coef_ + self.intercept_

    def predict(self, X):
        return self.classes_[self.decision_function(X).argmax(axis=1)]


@dataclass
class ProbeResult:
    mode: str           # frozen | finetuned
    top1: float
    epochs: int
    config_hash: str = ""
    seed: int = 0
    history: list = field(default_factory=list, repr=False)

    def rows(self, step=0):
        return [
            {
                "schema_version": CSV_SCHEMA_VERSION,
                "analysis": "probe",
                "config_hash": self.config_hash,
                "seed": self.seed,
                "step": step,
                "mode": self.mode,
                "top1": self.top1,
                "epochs": self.epochs,
            }
        ]


PROBE_HEADER = ["schema_version", "analysis", "config_hash", "seed", "step", "mode", "top1", "epochs"]


def linear_probe(features, labels, epochs=150, lr=0.05, seed=0, holdout_frac=0.2,
                 test_features=None, test_labels=None, config_hash="") -> ProbeResult:
    """Frozen-representation probe; reports held-out top-1 accuracy.

    When no explicit test set is given, a stratified holdout of the input
    provides one.
    """
    features, labels = check_X_y(features, labels)
    if test_features is None:
        train_idx, held_idx = stratified_holdout(labels, holdout_frac, seed=seed)
        test_features, test_labels = features[held_idx], labels[held_idx]
        features, labels = features[train_idx], labels[train_idx]
    probe = LinearProbe(epochs=epochs, lr=lr).fit(features, labels)
    top1 = float((probe.predict(np.asarray(test_features, dtype=np.float64)) == np.asarray(test_labels)).mean())
    return ProbeResult(mode="frozen", top1=top1, epochs=epochs, config_hash=config_hash, seed=seed)


# ----------------------------------------------------------------------
# finetuning

def finetune(model: StochConModel, train: Dataset, test: Dataset, epochs: int,
             seed: int = 0, lr: float = FINETUNE_LR, batch_size: int = 64,
             freeze_backbone: bool = False, config_hash: str = "") -> ProbeResult:
    """Supervised adaptation of the full network behind the latent path.

    A fresh linear head is attached on the decoded features. Training uses
    Adam at 3e-4 with a single step decay of 0.1 at 80% of the run; the
    Bernoulli temperature stays fixed at 0.1 throughout and Gaussian
    models use the latent mean only. Flips and crops are the only
    augmentations.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((int(seed), 91))))
    head = Linear(model.config.backbone_dim, train.num_classes,
                  np.random.Generator(np.random.PCG64(np.random.SeedSequence((int(seed), 92)))))
    params = dict(head.params("finetune_head"))
    if not freeze_backbone:
        params.update(model.named_parameters())
    opt = Adam(params, lr=lr)

    family = AugmentationFamily(noise_sigma=0.0, brightness=0.0)
    n = len(train)
    steps_per_epoch = max(1, n // batch_size)
    total_steps = max(1, epochs * steps_per_epoch)
    sched = LRSchedule(kind="step_decay", base_lr=lr, total_steps=total_steps,
                       decay_factor=FINETUNE_DECAY, decay_point=FINETUNE_DECAY_POINT)
    history = []
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(n)
        losses = []
        for b in range(steps_per_epoch):
            idx = order[b * batch_size:(b + 1) * batch_size]
            if idx.size < 1:
                continue
            views = make_views(train.images[idx], idx, family, 1, 0, seed=seed, epoch=epoch)
            opt.lr = lr_at(step, sched)
            opt.zero_grad()
            features = model.latent_forward(Tensor(views.views), temperature=FINETUNE_TEMPERATURE, rng=rng)
            loss = softmax_cross_entropy(head(features), train.labels[idx])
            loss.backward()
            opt.step()
            losses.append(loss.item())
            step += 1
        history.append(
            {"epoch": epoch + 1, "loss": float(np.mean(losses)) if losses else None,
             "lr": opt.lr, "temperature": FINETUNE_TEMPERATURE}
        )

    feats = model.latent_forward(Tensor(test.flat_float()), rng=None)
    top1 = float((head(feats).data.argmax(axis=1) == test.labels).mean())
    mode = "frozen" if freeze_backbone else "finetuned"
    return ProbeResult(mode=mode, top1=top1, epochs=epochs, config_hash=config_hash,
                       seed=seed, history=history)


# ----------------------------------------------------------------------
# countable metrics

@dataclass
class BitStats:
    counts: np.ndarray
    mean: float
    std: float
    latent_dim: int
    split: str = "train"
    step: int = 0
    count_mode: str = "ones"

    def rows(self, config_hash="", seed=0):
        return [
            {
                "schema_version": CSV_SCHEMA_VERSION,
                "analysis": "bits",
                "config_hash": config_hash,
                "seed": seed,
                "step": self.step,
                "split": self.split,
                "latent_dim": self.latent_dim,
                "count_mode": self.count_mode,
                "mean_active_bits": self.mean,
                "std_active_bits": self.std,
            }
        ]


BITS_HEADER = [
    "schema_version", "analysis", "config_hash", "seed", "step", "split",
    "latent_dim", "count_mode", "mean_active_bits", "std_active_bits",
]


def active_bit_count(model: StochConModel, dataset: Dataset, step: int = 0,
                     count_mode: str = "ones") -> BitStats:
    """Active bits per example on the deterministic eval path.

    A bit is active when its probability reaches 0.5 on the un-augmented
    centered view. count_mode "min_side" counts the smaller of the one and
    zero populations instead (both sides of the code carry information).
    """
    if model.config.distribution != "bernoulli":
        raise ContractError("bernoulli checkpoint required")
    bits = model.encode(dataset.flat_float(), mode="latent_hard")
    ones = bits.sum(axis=1)
    if count_mode == "ones":
        counts = ones
    elif count_mode == "min_side":
        counts = np.minimum(ones, model.config.latent_dim - ones)
    else:
        raise ParameterError(f"unknown count_mode {count_mode!r}")
    return BitStats(
        counts=counts.astype(np.int64),
        mean=float(counts.mean()),
        std=float(counts.std()),
        latent_dim=model.config.latent_dim,
        split=dataset.split,
        step=step,
        count_mode=count_mode,
    )


@dataclass
class VarianceStats:
    aggregate: float
    per_dimension: np.ndarray
    split: str = "train"
    step: int = 0

    def rows(self, config_hash="", seed=0):
        return [
            {
                "schema_version": CSV_SCHEMA_VERSION,
                "analysis": "variance",
                "config_hash": config_hash,
                "seed": seed,
                "step": self.step,
                "split": self.split,
                "aggregate_variance": self.aggregate,
                "min_dim_variance": float(self.per_dimension.min()),
                "max_dim_variance": float(self.per_dimension.max()),
            }
        ]


VARIANCE_HEADER = [
    "schema_version", "analysis", "config_hash", "seed", "step", "split",
    "aggregate_variance", "min_dim_variance", "max_dim_variance",
]


def aggregate_variance(model: StochConModel, dataset: Dataset, step: int = 0) -> VarianceStats:
    """Mean learned variance over examples and latent dimensions."""
    if model.config.distribution != "gaussian":
        raise ContractError("gaussian checkpoint required")
    flat = dataset.flat_float()
    if model.encoder is not None:
        h = model.backbone(Tensor(flat))
        params = model.encoder(h)
        log_var = params.data[:, model.config.latent_dim:2 * model.config.latent_dim]
    else:
        log_var = np.tile(model.free_log_var.data, (flat.shape[0], 1))
    variances = np.exp(np.clip(log_var, LOG_VAR_MIN, LOG_VAR_MAX))
    return VarianceStats(
        aggregate=float(variances.mean()),
        per_dimension=variances.mean(axis=0),
        split=dataset.split,
        step=step,
    )


# ----------------------------------------------------------------------
# random-forest feature sweeps

def macro_f1(y_true, y_pred, labels=None) -> float:
    """Unweighted mean F1 over all classes; absent-prediction classes score 0."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if labels is None:
        labels = np.unique(y_true)
    scores = []
    for cls in labels:
        tp = np.sum((y_pred == cls) & (y_true == cls))
        fp = np.sum((y_pred == cls) & (y_true != cls))
        fn = np.sum((y_pred != cls) & (y_true == cls))
        denom = 2 * tp + fp + fn
        scores.append(2.0 * tp / denom if denom > 0 else 0.0)
    return float(np.mean(scores))


@dataclass
class FeatureSweepResult:
    k_values: list
    mean_f1: list
    fold_f1: list  # list of per-fold lists, aligned with k_values

    def rows(self, config_hash="", seed=0, step=0):
        out = []
        for k, mean, folds in zip(self.k_values, self.mean_f1, self.fold_f1):
            out.append(
                {
                    "schema_version": CSV_SCHEMA_VERSION,
                    "analysis": "units",
                    "config_hash": config_hash,
                    "seed": seed,
                    "step": step,
                    "k": k,
                    "mean_f1": mean,
                    "fold_f1": ";".join(f"{v:.6f}" for v in folds),
                }
            )
        return out


UNITS_HEADER = ["schema_version", "analysis", "config_hash", "seed", "step", "k", "mean_f1", "fold_f1"]


def f1_vs_units(features, labels, k_values, n_folds=5, seed=0,
                n_trees=50, max_depth=12) -> FeatureSweepResult:
    """Macro F1 of a random forest restricted to its top-k important units.

    Per fold: fit on the training portion, rank features by Gini
    importance, refit on the top k (original column order preserved), and
    evaluate on the held-out portion. Reported numbers are means over
    folds.
    """
    features, labels = check_X_y(features, labels)
    d = features.shape[1]
    k_values = list(k_values)
    for k in k_values:
        if not 1 <= k <= d:
            raise ContractError(f"k={k} outside [1, {d}]")
    folds = stratified_kfold(labels, n_folds, seed=seed)
    per_fold = np.zeros((len(k_values), n_folds))
    for f, (train_idx, held_idx) in enumerate(folds):
        ranker = RandomForestClassifier(n_trees=n_trees, max_depth=max_depth, seed=seed).fit(
            features[train_idx], labels[train_idx]
        )
        ranking = np.argsort(-ranker.feature_importances_, kind="stable")
        for ki, k in enumerate(k_values):
            keep = np.sort(ranking[:k])
            rf = RandomForestClassifier(n_trees=n_trees, max_depth=max_depth, seed=seed).fit(
                features[train_idx][:, keep], labels[train_idx]
            )
            pred = rf.predict(features[held_idx][:, keep])
            per_fold[ki, f] = macro_f1(labels[held_idx], pred, labels=np.unique(labels))
    return FeatureSweepResult(
        k_values=k_values,
        mean_f1=[float(v) for v in per_fold.mean(axis=1)],
        fold_f1=[list(map(float, row)) for row in per_fold],
    )


# ----------------------------------------------------------------------
# compression arithmetic

def compression_ratio(input_shape, latent_bits: int, bits_per_pixel: int = 8) -> float:
    """How many times smaller the binary code is than the raw input."""
    h, w, c = input_shape
    if min(h, w, c) <= 0:
        raise ContractError("input dimensions must be positive")
    if latent_bits <= 0:
        raise ContractError("latent_bits must be positive")
    return (h * w * c * bits_per_pixel) / latent_bits


# ----------------------------------------------------------------------
# CSV emission

def write_csv(path, header, rows) -> None:
    """Write rows (dicts) under a fixed header; unknown keys are an error."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=header)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
