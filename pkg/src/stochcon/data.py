"""Desk-scale datasets, the augmentation family, and view generation.

Images are small grayscale grids with class-specific bright patches on a
noisy background, so class identity is recoverable from a handful of local
features. All randomness flows through generators derived from (seed,
stream, ...) tuples, which makes every dataset and every view sequence a
pure function of its arguments.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractError, DataError, ParameterError

__all__ = [
    "AugmentationFamily",
    "Dataset",
    "ViewSet",
    "augment",
    "load_dataset",
    "make_synthetic_blobs",
    "make_views",
    "save_dataset",
    "stratified_holdout",
    "stratified_kfold",
]

# Stream tags keep independent RNG purposes from colliding.
STREAM_PROTO = 101
STREAM_PIXELS = 102
STREAM_AUG = 103
STREAM_ORDER = 104

_SPLIT_CODE = {"train": 0, "test": 1, "val": 2}

_MAGIC = b"SCDS"
_FORMAT_VERSION = 1

PATCH_SIZE = 3


def _stream(*key) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(tuple(int(k) for k in key))))


@dataclass
class Dataset:
    """Images as 8-bit grids plus integer labels."""

    images: np.ndarray  # [N, H, W, C] uint8
    labels: np.ndarray  # [N] int64
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.dtype != np.uint8:
            raise ContractError("images must be a uint8 array of shape [N, H, W, C]")
        if self.labels.shape != (self.images.shape[0],):
            raise ContractError("labels must align with images")

    def __len__(self):
        return self.images.shape[0]

    @property
    def image_shape(self):
        return self.images.shape[1:]

    def flat_float(self) -> np.ndarray:
        """Un-augmented centered views: pixels scaled to [0, 1], flattened per example."""
        n = self.images.shape[0]
        return self.images.reshape(n, -1).astype(np.float64) / 255.0


@dataclass
class AugmentationFamily:
    """Crop/flip/jitter/noise family; global crops are large, local crops small."""

    global_scale: tuple = (0.5, 1.0)   # crop area fraction range
    local_scale: tuple = (0.15, 0.5)
    flip_prob: float = 0.5
    noise_sigma: float = 8.0 / 255.0
    brightness: float = 0.2


def make_synthetic_blobs(
    num_classes: int,
    n_per_class: int,
    image_size: int = 16,
    planted_bits: int = 3,
    seed: int = 0,
    noise: float = 0.18,
    background: float = 0.25,
    patch_boost: float = 0.55,
    patch_size: int = PATCH_SIZE,
    split: str = "train",
) -> Dataset:
    """Class-conditional blob images; a pure function of its arguments.

    Each class owns a disjoint set of planted_bits patch locations drawn
    from a coarse grid; those patches are brightened against a noisy
    background. Train and test splits with the same seed share class
    prototypes but use disjoint pixel-noise streams.
    """
    if num_classes < 2:
        raise ParameterError("need at least two classes")
    if split not in _SPLIT_CODE:
        raise ParameterError(f"unknown split {split!r}")
    slots = [
        (r, c)
        for r in range(0, image_size - patch_size + 1, patch_size)
        for c in range(0, image_size - patch_size + 1, patch_size)
    ]
    if planted_bits * num_classes > len(slots):
        raise ParameterError(
            f"{num_classes} classes x {planted_bits} patches exceed the {len(slots)}-slot grid"
        )
    proto_rng = _stream(seed, STREAM_PROTO)
    order = proto_rng.permutation(len(slots))
    class_slots = [
        [slots[j] for j in order[c * planted_bits:(c + 1) * planted_bits]]
        for c in range(num_classes)
    ]

    pix_rng = _stream(seed, STREAM_PIXELS, _SPLIT_CODE[split])
    n = num_classes * n_per_class
    labels = np.repeat(np.arange(num_classes), n_per_class)
    labels = labels[pix_rng.permutation(n)]
    images = np.empty((n, image_size, image_size, 1), dtype=np.uint8)
    for i in range(n):
        canvas = pix_rng.normal(background, noise, size=(image_size, image_size))
        for (r, c) in class_slots[labels[i]]:
            canvas[r:r + patch_size, c:c + patch_size] += patch_boost
        images[i, :, :, 0] = np.round(np.clip(canvas, 0.0, 1.0) * 255.0).astype(np.uint8)
    return Dataset(images=images, labels=labels.astype(np.int64), num_classes=num_classes, split=split)


def _resize_bilinear(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = src.shape[:2]
    if (h, w) == (out_h, out_w):
        return src.copy()
    ys = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top = src[y0][:, x0] * (1 - wx) + src[y0][:, x1] * wx
    bottom = src[y1][:, x0] * (1 - wx) + src[y1][:, x1] * wx
    return top * (1 - wy) + bottom * wy


def augment(image: np.ndarray, kind: str, family: AugmentationFamily, rng: np.random.Generator) -> np.ndarray:
    """One augmented view: crop, resize back, flip, brightness jitter, pixel noise.

    Output is float64 in [0, 1] with the input resolution. The number and
    order of RNG draws is fixed, so view sequences replay exactly.
    """
    if kind == "global":
        lo, hi = family.global_scale
    elif kind == "local":
        lo, hi = family.local_scale
    else:
        raise ParameterError(f"unknown view kind {kind!r}")
    h, w, _ = image.shape
    x = image.astype(np.float64) / 255.0

    area = rng.uniform(lo, hi)
    side = max(1, int(round(np.sqrt(area) * h)))
    top = int(rng.integers(0, h - side + 1))
    left = int(rng.integers(0, w - side + 1))
    view = _resize_bilinear(x[top:top + side, left:left + side], h, w)
    if rng.uniform() < family.flip_prob:
        view = view[:, ::-1]
    view = view + rng.uniform(-family.brightness, family.brightness)
    view = view + rng.normal(0.0, family.noise_sigma, size=view.shape)
    return np.clip(view, 0.0, 1.0)


@dataclass
class ViewSet:
    """Flattened augmented views of one batch with their pairing structure."""

    views: np.ndarray        # [M, H*W*C] float64 in [0, 1]
    example_ids: np.ndarray  # [M] batch-local group id
    is_global: np.ndarray    # [M] bool

    @property
    def n_rows(self):
        return self.views.shape[0]


def make_views(
    images: np.ndarray,
    example_indices: np.ndarray,
    family: AugmentationFamily,
    n_global: int,
    n_local: int,
    seed: int,
    epoch: int,
) -> ViewSet:
    """Generate n_global + n_local views per example.

    Each example owns an RNG stream keyed by (seed, epoch, dataset index),
    so view generation is order-independent and reproducible across resume.
    """
    if n_global + n_local < 1:
        raise ParameterError("need at least one view per example")
    rows, ids, glob = [], [], []
    for b, idx in enumerate(example_indices):
        rng = _stream(seed, STREAM_AUG, epoch, idx)
        for _ in range(n_global):
            rows.append(augment(images[b], "global", family, rng).reshape(-1))
            ids.append(b)
            glob.append(True)
        for _ in range(n_local):
            rows.append(augment(images[b], "local", family, rng).reshape(-1))
            ids.append(b)
            glob.append(False)
    return ViewSet(
        views=np.stack(rows, axis=0),
        example_ids=np.asarray(ids, dtype=np.intp),
        is_global=np.asarray(glob, dtype=bool),
    )


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Deterministic shuffle of example indices for one epoch."""
    return _stream(seed, STREAM_ORDER, epoch).permutation(n)


def stratified_kfold(labels, k: int, seed: int = 0):
    """k disjoint folds covering the index set, class proportions within one example.

    Returns a list of (train_idx, heldout_idx) pairs.
    """
    labels = np.asarray(labels)
    n = labels.shape[0]
    if k < 2:
        raise ParameterError("k must be at least 2")
    rng = _stream(seed, 7, k)
    fold_of = np.empty(n, dtype=int)
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        if members.size < k:
            raise ContractError(f"class {cls} has {members.size} members, fewer than k={k}")
        members = members[rng.permutation(members.size)]
        fold_of[members] = np.arange(members.size) % k
    folds = []
    everything = np.arange(n)
    for f in range(k):
        held = everything[fold_of == f]
        train = everything[fold_of != f]
        folds.append((train, held))
    return folds


def stratified_holdout(labels, frac: float, seed: int = 0):
    """Single stratified split: (train_idx, heldout_idx)."""
    labels = np.asarray(labels)
    rng = _stream(seed, 8)
    train, held = [], []
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        members = members[rng.permutation(members.size)]
        n_held = max(1, int(round(frac * members.size)))
        if n_held >= members.size:
            raise ContractError(f"holdout fraction {frac} leaves class {cls} empty")
        held.append(members[:n_held])
        train.append(members[n_held:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(held))


def save_dataset(path, dataset: Dataset) -> None:
    """Raw binary container: magic, version, dims, pixel bytes, label bytes."""
    n, h, w, c = dataset.images.shape
    if dataset.num_classes > 255:
        raise DataError("the container stores labels as single bytes")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<H", _FORMAT_VERSION))
        fh.write(struct.pack("<5I", n, h, w, c, dataset.num_classes))
        fh.write(dataset.images.tobytes())
        fh.write(dataset.labels.astype(np.uint8).tobytes())


def load_dataset(path, split: str = "train") -> Dataset:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise DataError(f"{path}: not a dataset container (bad magic)")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != _FORMAT_VERSION:
            raise DataError(f"{path}: unsupported container version {version}")
        n, h, w, c, num_classes = struct.unpack("<5I", fh.read(20))
        pixels = fh.read(n * h * w * c)
        raw_labels = fh.read(n)
        if len(pixels) != n * h * w * c or len(raw_labels) != n:
            raise DataError(f"{path}: truncated container")
    images = np.frombuffer(pixels, dtype=np.uint8).reshape(n, h, w, c).copy()
    labels = np.frombuffer(raw_labels, dtype=np.uint8).astype(np.int64)
    return Dataset(images=images, labels=labels, num_classes=num_classes, split=split)
