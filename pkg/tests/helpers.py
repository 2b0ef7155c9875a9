"""Shared test utilities: an independent SimCLR forward, noise stubs, statistics."""

import numpy as np

from stochcon.data import AugmentationFamily, make_views
from stochcon.objective import InfoNCEConfig, ViewBatch, infonce_loss
from stochcon.tensor import Tensor, repeat_rows


class ZeroNoise:
    """Duck-typed generator stub that always returns zero noise."""

    def standard_normal(self, size=None):
        return np.zeros(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        mid = (low + high) / 2.0
        return mid if size is None else np.full(size, mid)


def copy_affine_chain(mlp):
    """Snapshot an MLP's weights as plain arrays."""
    return [(layer.w.data.copy(), layer.b.data.copy()) for layer in mlp.layers]


def wrap_affine_chain(arrays):
    return [
        (Tensor(w.copy(), requires_grad=True), Tensor(b.copy(), requires_grad=True))
        for w, b in arrays
    ]


def run_affine_chain(x, layers):
    """Plain MLP forward: affine + relu between, last layer linear."""
    for w, b in layers[:-1]:
        x = (x @ w + repeat_rows(b, x.data.shape[0])).relu()
    w, b = layers[-1]
    return x @ w + repeat_rows(b, x.data.shape[0])


def plain_simclr_loss(backbone_layers, head_layers, views, temperature):
    """Independent baseline forward: head(backbone(views)) into InfoNCE."""
    x = Tensor(views.views)
    h = run_affine_chain(x, backbone_layers)
    v = run_affine_chain(h, head_layers)
    anchor = views.is_global if not views.is_global.all() else None
    batch = ViewBatch.from_groups(v, views.example_ids, anchor_mask=anchor)
    return infonce_loss(batch, InfoNCEConfig(temperature=temperature))


def batch_views(dataset, indices, n_global, n_local, seed, epoch, family=None):
    family = family or AugmentationFamily()
    return make_views(dataset.images[indices], np.asarray(indices), family, n_global, n_local, seed, epoch)


def spearman(a, b) -> float:
    """Spearman rank correlation via Pearson on ranks (average ranks on ties)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)

    def ranks(x):
        order = np.argsort(x, kind="stable")
        r = np.empty(len(x))
        r[order] = np.arange(1, len(x) + 1)
        for val in np.unique(x):
            mask = x == val
            r[mask] = r[mask].mean()
        return r

    ra, rb = ranks(a), ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = np.sqrt((ra**2).sum() * (rb**2).sum())
    return float((ra * rb).sum() / denom) if denom > 0 else 0.0
