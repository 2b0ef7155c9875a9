"""Architecture and pretraining forward pass.

A backbone MLP maps each augmented view to features h. Views on the
stochastic branch are encoded to latent natural parameters, sampled through
a pathwise-differentiable distribution, decoded back to feature space, and
only then projected by the contrastive head; every stochastic-branch view
takes the latent path whether it acts as a positive or a negative.
Deterministic-branch views go straight from h to the head. With
distribution "none" the whole latent machinery disappears and the model is
a plain SimCLR baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distributions import LOG_VAR_MAX, LOG_VAR_MIN, GumbelBernoulli, IsoGaussian
from .exceptions import ContractError, ParameterError
from .objective import InfoNCEConfig, ViewBatch, infonce_loss
from .tensor import Tensor, concat_rows, repeat_cols, repeat_rows, take_elements
from .data import ViewSet

__all__ = [
    "Linear",
    "StochConConfig",
    "StochConModel",
    "SupervisedBernoulli",
    "parameter_count",
    "softmax_cross_entropy",
]

# Init-stream tags, one per component, so adding or removing a component
# never shifts another component's draws.
_INIT_BACKBONE = 11
_INIT_HEAD = 12
_INIT_ENCODER = 13
_INIT_DECODER = 14
_INIT_CLASSIFIER = 15


def _init_stream(seed: int, tag: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((int(seed), int(tag)))))


class Linear:
    """Affine layer with fan-in-scaled uniform weights and zero biases."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(in_dim)
        self.w = Tensor(rng.uniform(-bound, bound, size=(in_dim, out_dim)), requires_grad=True)
        self.b = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + repeat_rows(self.b, x.data.shape[0])

    def params(self, prefix: str) -> dict:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class MLP:
    """Stack of affine layers with relu between them; the last layer is linear."""

    def __init__(self, dims, rng):
        self.layers = [Linear(a, b, rng) for a, b in zip(dims, dims[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = layer(x).relu()
        return self.layers[-1](x)

    def params(self, prefix: str) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.params(f"{prefix}.{i}"))
        return out


@dataclass
class StochConConfig:
    """Architecture, distribution, and view-structure settings."""

    input_dim: int = 256
    hidden_dims: tuple = (256, 256)
    backbone_dim: int = 128
    proj_dim: int = 64
    latent_dim: int = 32
    bottleneck: bool = True
    distribution: str = "bernoulli"   # bernoulli | gaussian | none
    variant: str = "top"              # top: latent on global views; bottom: on local views
    hardness: str = "soft"            # soft | hard (straight-through bits)
    variance_source: str = "opposing_view"  # same_view | opposing_view
    n_global: int = 2
    n_local: int = 2
    latent_samples: int = 1
    temperature: float = 0.2          # InfoNCE similarity temperature
    temp_start: float = 1.0           # Gumbel-Bernoulli anneal endpoints
    temp_end: float = 0.1

    def __post_init__(self):
        self.hidden_dims = tuple(self.hidden_dims)
        if self.distribution not in ("bernoulli", "gaussian", "none"):
            raise ParameterError(f"unknown distribution {self.distribution!r}")
        if self.variant not in ("top", "bottom"):
            raise ParameterError(f"unknown variant {self.variant!r}")
        if self.hardness not in ("soft", "hard"):
            raise ParameterError(f"unknown hardness {self.hardness!r}")
        if self.variance_source not in ("same_view", "opposing_view"):
            raise ParameterError(f"unknown variance_source {self.variance_source!r}")
        if self.latent_samples < 1:
            raise ParameterError("latent_samples must be >= 1")
        if self.n_global < 1 or self.n_global + self.n_local < 2:
            raise ParameterError("need at least one global view and two views per example")
        # A disabled bottleneck makes encoder/decoder the identity, which
        # fixes the latent width to the backbone width.
        if not self.bottleneck:
            self.latent_dim = self.backbone_dim

    @property
    def stochastic(self) -> bool:
        return self.distribution != "none"

    @property
    def encoder_out_dim(self) -> int:
        return 2 * self.latent_dim if self.distribution == "gaussian" else self.latent_dim


def parameter_count(config: StochConConfig) -> int:
    """Closed-form parameter count: sum of (fan_in + 1) * fan_out per layer.

    The head hidden width equals the backbone width. A disabled-bottleneck
    Gaussian model owns one free log-variance vector instead of projector
    weights.
    """
    dims = (config.input_dim, *config.hidden_dims, config.backbone_dim)
    total = sum((a + 1) * b for a, b in zip(dims, dims[1:]))
    d = config.backbone_dim
    total += (d + 1) * d + (d + 1) * config.proj_dim
    if config.stochastic:
        if config.bottleneck:
            total += (d + 1) * config.encoder_out_dim
            total += (config.latent_dim + 1) * d
        elif config.distribution == "gaussian":
            total += config.latent_dim
    return total


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood under a softmax over the last axis."""
    labels = np.asarray(labels, dtype=np.intp)
    n, _ = logits.data.shape
    row_max = logits.max(axis=1)
    centered = logits - repeat_cols(row_max, logits.data.shape[1])
    log_norm = centered.exp().sum(axis=1).log()
    picked = take_elements(centered, np.arange(n), labels)
    return (log_norm - picked).mean()


class StochConModel:
    """Backbone, contrastive head, and optional stochastic bottleneck."""

    def __init__(self, config: StochConConfig, seed: int = 0):
        self.config = config
        self.seed = int(seed)
        c = config
        self.backbone = MLP((c.input_dim, *c.hidden_dims, c.backbone_dim), _init_stream(seed, _INIT_BACKBONE))
        self.head = MLP((c.backbone_dim, c.backbone_dim, c.proj_dim), _init_stream(seed, _INIT_HEAD))
        self.encoder = None
        self.decoder = None
        self.free_log_var = None
        if c.stochastic and c.bottleneck:
            self.encoder = Linear(c.backbone_dim, c.encoder_out_dim, _init_stream(seed, _INIT_ENCODER))
            self.decoder = Linear(c.latent_dim, c.backbone_dim, _init_stream(seed, _INIT_DECODER))
        elif c.distribution == "gaussian":
            # identity projectors leave no variance head; keep a free one
            self.free_log_var = Tensor(np.zeros(c.latent_dim), requires_grad=True)

    # ------------------------------------------------------------------
    # parameters

    def named_parameters(self) -> dict:
        params = {}
        params.update(self.backbone.params("backbone"))
        params.update(self.head.params("head"))
        if self.encoder is not None:
            params.update(self.encoder.params("encoder"))
            params.update(self.decoder.params("decoder"))
        if self.free_log_var is not None:
            params["latent.log_var"] = self.free_log_var
        return params

    def num_params(self) -> int:
        return sum(p.data.size for p in self.named_parameters().values())

    def zero_grad(self):
        for p in self.named_parameters().values():
            p.zero_grad()

    def load_parameters(self, arrays: dict):
        params = self.named_parameters()
        if set(arrays) != set(params):
            missing = set(params) ^ set(arrays)
            raise ContractError(f"parameter names do not match the architecture: {sorted(missing)}")
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != params[name].data.shape:
                raise ContractError(f"shape mismatch for {name}: {arr.shape}")
            params[name].data = arr.copy()

    # ------------------------------------------------------------------
    # latent wiring

    def _encode_latent_params(self, h: Tensor) -> Tensor:
        return self.encoder(h) if self.encoder is not None else h

    def _decode(self, z: Tensor) -> Tensor:
        return self.decoder(z) if self.decoder is not None else z

    def _stochastic_mask(self, views: ViewSet) -> np.ndarray:
        if not self.config.stochastic:
            return np.zeros(views.n_rows, dtype=bool)
        return views.is_global.copy() if self.config.variant == "top" else ~views.is_global

    @staticmethod
    def _opposing_rows(views: ViewSet, sto_mask: np.ndarray) -> np.ndarray:
        """For each stochastic row, the partner whose features parameterize
        its variance: the example's first deterministic-branch view when one
        exists, otherwise its first other stochastic view."""
        sto_idx = np.flatnonzero(sto_mask)
        partners = np.empty(sto_idx.size, dtype=np.intp)
        for pos, i in enumerate(sto_idx):
            mates = np.flatnonzero(views.example_ids == views.example_ids[i])
            opposite = [j for j in mates if not sto_mask[j]]
            if opposite:
                partners[pos] = opposite[0]
                continue
            same = [j for j in mates if j != i]
            if not same:
                raise ContractError("opposing-view variance needs at least two views per example")
            partners[pos] = same[0]
        return partners

    def _anchor_mask(self, views: ViewSet) -> np.ndarray:
        # multi-crop convention: with local views present only globals anchor
        if self.config.n_local > 0:
            return views.is_global.copy()
        return np.ones(views.n_rows, dtype=bool)

    # ------------------------------------------------------------------
    # forward passes

    def pretrain_loss(self, views: ViewSet, temperature: float, rng: np.random.Generator,
                      return_internals: bool = False):
        """One contrastive forward pass; the loss averages the configured
        number of latent samples per view."""
        cfg = self.config
        nce = InfoNCEConfig(temperature=cfg.temperature)
        x = Tensor(views.views)
        h = self.backbone(x)
        sto_mask = self._stochastic_mask(views)
        anchor_mask = self._anchor_mask(views)

        if not sto_mask.any():
            v = self.head(h)
            batch = ViewBatch.from_groups(v, views.example_ids, anchor_mask=anchor_mask)
            loss = infonce_loss(batch, nce)
            if return_internals:
                return loss, {"h": h, "v": v}
            return loss

        det_idx = np.flatnonzero(~sto_mask)
        sto_idx = np.flatnonzero(sto_mask)
        order = np.concatenate([det_idx, sto_idx])
        inverse = np.empty_like(order)
        inverse[order] = np.arange(order.size)

        h_sto = h.take_rows(sto_idx)
        latent_params = self._encode_latent_params(h_sto)
        internals = {"h": h, "latent_params": latent_params}

        if cfg.distribution == "gaussian":
            if self.encoder is not None:
                mean = latent_params.slice_cols(0, cfg.latent_dim)
                if cfg.variance_source == "opposing_view":
                    partners = self._opposing_rows(views, sto_mask)
                    opp_params = self._encode_latent_params(h.take_rows(partners))
                    log_var = opp_params.slice_cols(cfg.latent_dim, 2 * cfg.latent_dim)
                else:
                    log_var = latent_params.slice_cols(cfg.latent_dim, 2 * cfg.latent_dim)
            else:
                mean = latent_params
                log_var = repeat_rows(self.free_log_var, sto_idx.size)
            log_var = log_var.clip(LOG_VAR_MIN, LOG_VAR_MAX)
            dist = IsoGaussian(mean, log_var, cfg.variance_source)
            internals["log_var"] = log_var
        else:
            dist = GumbelBernoulli(latent_params, temperature, hard=cfg.hardness == "hard")

        v_det = self.head(h.take_rows(det_idx)) if det_idx.size else None
        losses = []
        internals["z_samples"] = []
        for _ in range(cfg.latent_samples):
            z = dist.rsample(rng)
            internals["z_samples"].append(z)
            v_sto = self.head(self._decode(z))
            v_all = concat_rows([v_det, v_sto]) if v_det is not None else v_sto
            v = v_all.take_rows(inverse)
            batch = ViewBatch.from_groups(v, views.example_ids, anchor_mask=anchor_mask)
            losses.append(infonce_loss(batch, nce))
        loss = losses[0] if len(losses) == 1 else _mean_scalars(losses)
        if return_internals:
            internals["dist"] = dist
            return loss, internals
        return loss

    def latent_forward(self, x: Tensor, temperature: float = 0.1,
                       rng: np.random.Generator | None = None) -> Tensor:
        """Features after the latent path, for supervised heads.

        Bernoulli models sample when an rng is given and use deterministic
        threshold bits otherwise; Gaussian models always use the mean.
        """
        h = self.backbone(x)
        cfg = self.config
        if not cfg.stochastic:
            return h
        latent_params = self._encode_latent_params(h)
        if cfg.distribution == "gaussian":
            mean = latent_params.slice_cols(0, cfg.latent_dim) if self.encoder is not None else latent_params
            return self._decode(mean)
        dist = GumbelBernoulli(latent_params, temperature, hard=cfg.hardness == "hard")
        z = dist.rsample(rng) if rng is not None else dist.mode()
        return self._decode(z)

    def encode(self, flat_images: np.ndarray, mode: str = "backbone_features") -> np.ndarray:
        """Deterministic evaluation-time features for probing and analysis.

        backbone_features: h. latent_probs: bit probabilities (Bernoulli) or
        the latent mean (Gaussian). latent_hard: exact {0, 1} bits.
        """
        cfg = self.config
        x = Tensor(np.asarray(flat_images, dtype=np.float64))
        h = self.backbone(x)
        if mode == "backbone_features":
            return h.data.copy()
        if not cfg.stochastic:
            raise ContractError(f"mode {mode!r} needs a latent model, got distribution='none'")
        latent_params = self._encode_latent_params(h)
        if cfg.distribution == "gaussian":
            if mode == "latent_probs":
                mean = latent_params.slice_cols(0, cfg.latent_dim) if self.encoder is not None else latent_params
                return mean.data.copy()
            raise ContractError("latent_hard requires a Bernoulli model")
        probs = latent_params.sigmoid()
        if mode == "latent_probs":
            return probs.data.copy()
        if mode == "latent_hard":
            return np.where(probs.data >= 0.5, 1.0, 0.0)
        raise ContractError(f"unknown encode mode {mode!r}")


def _mean_scalars(losses):
    total = losses[0]
    for item in losses[1:]:
        total = total + item
    return total * (1.0 / len(losses))


class SupervisedBernoulli:
    """Supervised classifier with a Gumbel-Bernoulli representation layer.

    Per batch, the latent layer is bypassed with probability drop_prob (the
    features feed the classifier directly); otherwise variates feed it.
    """

    def __init__(self, config: StochConConfig, num_classes: int, seed: int = 0):
        if config.distribution != "bernoulli":
            raise ContractError("the supervised baseline uses a Bernoulli layer")
        self.model = StochConModel(config, seed=seed)
        self.num_classes = int(num_classes)
        self.classifier = Linear(config.backbone_dim, num_classes, _init_stream(seed, _INIT_CLASSIFIER))

    def named_parameters(self) -> dict:
        params = dict(self.model.named_parameters())
        params.update(self.classifier.params("classifier"))
        return params

    def zero_grad(self):
        for p in self.named_parameters().values():
            p.zero_grad()

    def loss(self, flat_images: np.ndarray, labels, drop_prob: float,
             temperature: float, rng: np.random.Generator) -> Tensor:
        x = Tensor(np.asarray(flat_images, dtype=np.float64))
        bypass = rng.uniform() < drop_prob
        if bypass:
            features = self.model.backbone(x)
        else:
            features = self.model.latent_forward(x, temperature=temperature, rng=rng)
        return softmax_cross_entropy(self.classifier(features), labels)

    def predict(self, flat_images: np.ndarray) -> np.ndarray:
        x = Tensor(np.asarray(flat_images, dtype=np.float64))
        features = self.model.latent_forward(x, rng=None)
        return self.classifier(features).data.argmax(axis=1)
