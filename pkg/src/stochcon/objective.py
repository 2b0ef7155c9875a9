"""Contrastive InfoNCE objective over a batch of paired views.

Each anchor row i with positive j contributes

    l(i, j) = -log( exp(sim(v_i, v_j)/t) / sum_{k != i} exp(sim(v_i, v_k)/t) )

where sim is cosine similarity and t the similarity temperature. The loss
is the mean over anchor terms, so its magnitude is batch-size invariant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractError, ParameterError
from .tensor import Tensor, l2_normalize, repeat_cols, take_elements

__all__ = ["InfoNCEConfig", "ViewBatch", "cosine_sim", "infonce_loss"]

# Additive mask that drives exp() to exactly 0.0 for excluded similarity
# entries; similarity magnitudes are bounded by 1/temperature, so this can
# never become the row maximum.
_EXCLUDE_FILL = -1e9


@dataclass
class InfoNCEConfig:
    temperature: float = 0.2
    eps_norm: float = 1e-12

    def __post_init__(self):
        if self.temperature <= 0.0:
            raise ParameterError(f"temperature must be positive, got {self.temperature}")


@dataclass
class ViewBatch:
    """Projected representations plus the anchor/positive pair structure.

    pairs holds one (anchor_row, positive_row) entry per loss term. The
    factory methods build it from either an explicit pair index (the
    two-view involution) or from example groups (multi-crop).
    """

    v: Tensor
    pairs: np.ndarray
    anchor_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        m = self.v.data.shape[0]
        if m < 4:
            raise ContractError(f"a view batch needs at least 4 rows, got {m}")
        if self.anchor_mask is None:
            mask = np.zeros(m, dtype=bool)
            mask[np.unique(self.pairs[:, 0])] = True
            self.anchor_mask = mask

    @property
    def n_rows(self) -> int:
        return self.v.data.shape[0]

    @classmethod
    def from_pair_index(cls, v: Tensor, pair_index, anchor_mask=None) -> "ViewBatch":
        """Two-view structure: pair_index[i] is row i's positive partner.

        The index must be an involution without fixed points on anchor rows.
        """
        pair_index = np.asarray(pair_index, dtype=np.intp)
        m = v.data.shape[0]
        if pair_index.shape != (m,):
            raise ContractError(f"pair_index must have shape ({m},)")
        if anchor_mask is None:
            anchor_mask = np.ones(m, dtype=bool)
        anchor_mask = np.asarray(anchor_mask, dtype=bool)
        anchors = np.flatnonzero(anchor_mask)
        for i in anchors:
            j = pair_index[i]
            if not 0 <= j < m or j == i or pair_index[j] != i:
                raise ContractError(f"row {i} has no valid positive partner (pair_index={j})")
        pairs = np.stack([anchors, pair_index[anchors]], axis=1)
        return cls(v=v, pairs=pairs, anchor_mask=anchor_mask)

    @classmethod
    def from_groups(cls, v: Tensor, example_ids, anchor_mask=None) -> "ViewBatch":
        """Multi-crop structure: each anchor pairs with every other view of
        the same example; anchor_mask defaults to all rows."""
        example_ids = np.asarray(example_ids)
        m = v.data.shape[0]
        if anchor_mask is None:
            anchor_mask = np.ones(m, dtype=bool)
        anchor_mask = np.asarray(anchor_mask, dtype=bool)
        pairs = []
        for i in np.flatnonzero(anchor_mask):
            mates = np.flatnonzero(example_ids == example_ids[i])
            mates = mates[mates != i]
            if mates.size == 0:
                raise ContractError(f"anchor row {i} has no positive partner in its group")
            for j in mates:
                pairs.append((i, j))
        return cls(v=v, pairs=np.asarray(pairs, dtype=np.intp), anchor_mask=anchor_mask)


def cosine_sim(a: Tensor, b: Tensor, eps: float = 1e-12) -> Tensor:
    """Cosine similarity <a, b> / (max(|a|, eps) * max(|b|, eps)) as a scalar tensor."""
    return (l2_normalize(a, eps) * l2_normalize(b, eps)).sum()


def infonce_loss(batch: ViewBatch, cfg: InfoNCEConfig) -> Tensor:
    """Mean InfoNCE over the batch's anchor terms.

    The denominator for anchor i runs over every row except i itself, so
    positives of other examples act as negatives. Computed with
    max-subtracted log-sum-exp; exact whenever all similarities coincide.
    """
    m = batch.n_rows
    vn = l2_normalize(batch.v, cfg.eps_norm)
    sims = vn @ vn.transpose()
    scaled = sims * (1.0 / cfg.temperature)
    mask = np.zeros((m, m))
    np.fill_diagonal(mask, _EXCLUDE_FILL)
    masked = scaled + Tensor(mask)
    row_max = masked.max(axis=1)
    centered = masked - repeat_cols(row_max, m)
    log_denom = centered.exp().sum(axis=1).log()
    anchors = batch.pairs[:, 0]
    positives = batch.pairs[:, 1]
    pos_centered = take_elements(centered, anchors, positives)
    return (log_denom.take_rows(anchors) - pos_centered).mean()
