"""Pretraining objectives: SimCLR NT-Xent with an MLP projector and
Beta(5,2) example mixing, plus supervised classification losses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError, UsageError
from .layers import Linear, ParamStore, activation
from .model import Model, forward_features
from .tensor import Tensor

MIX_BETA_A = 5.0
MIX_BETA_B = 2.0
NT_XENT_TEMPERATURE = 0.1


def _partner_permutation(n: int, rng: np.random.Generator) -> np.ndarray:
    """Random permutation with no fixed points (rotation of a random order)."""
    order = rng.permutation(n)
    partner = np.empty(n, dtype=np.int64)
    partner[order] = order[(np.arange(n) + 1) % n]
    return partner


def mix_examples(
    batch: np.ndarray,
    rng: np.random.Generator,
    labels: np.ndarray | None = None,
    lam: np.ndarray | None = None,
):
    """Convex combination of each clip with a random partner, ratio Beta(5,2).

    Labels, when given, are mixed with the same per-example ratio. A batch of
    one is returned unchanged (no partner exists).
    """
    batch = np.asarray(batch)
    n = batch.shape[0]
    if n < 2:
        return (batch, labels) if labels is not None else batch
    if lam is None:
        lam = rng.beta(MIX_BETA_A, MIX_BETA_B, size=n)
    lam = np.asarray(lam, dtype=batch.dtype)
    partner = _partner_permutation(n, rng)
    lam_col = lam.reshape((n,) + (1,) * (batch.ndim - 1))
    mixed = lam_col * batch + (1.0 - lam_col) * batch[partner]
    if labels is None:
        return mixed
    labels = np.asarray(labels, dtype=np.float64)
    lam_lab = lam.reshape((n,) + (1,) * (labels.ndim - 1)).astype(np.float64)
    mixed_labels = lam_lab * labels + (1.0 - lam_lab) * labels[partner]
    return mixed, mixed_labels


def nt_xent(z_a: Tensor, z_b: Tensor, temperature: float = NT_XENT_TEMPERATURE) -> Tensor:
    """Normalized-temperature cross entropy over 2N views.

    Each anchor's positive is the other view of the same clip; all remaining
    2N-2 embeddings act as negatives. Rows are L2-normalized internally.
    """
    if z_a.shape != z_b.shape or z_a.ndim != 2:
        raise DimensionError(f"view batches must share [N,D] shape, got {z_a.shape}, {z_b.shape}")
    n = z_a.shape[0]
    if n < 2:
        raise UsageError("nt_xent needs N >= 2 (no negatives exist otherwise)")
    z = T.l2_normalize(T.concat([z_a, z_b], axis=0), axis=1)
    sims = T.matmul(z, T.transpose(z, (1, 0))) * (1.0 / temperature)
    mask = Tensor(np.eye(2 * n, dtype=sims.dtype) * -1e9)
    masked = sims + mask
    log_probs = T.log_softmax(masked, axis=1)
    pos = np.concatenate([np.arange(n) + n, np.arange(n)])
    picked = T.getitem(log_probs, (np.arange(2 * n), pos))
    return -T.tmean(picked)


@dataclass
class ProjectorConfig:
    hidden_width: int = 4096
    hidden_layers: int = 3
    output_width: int = 256


class Projector:
    """MLP head used only during contrastive pretraining."""

    def __init__(self, store: ParamStore, feature_dim: int, cfg: ProjectorConfig,
                 rng: np.random.Generator, name: str = "projector"):
        self.cfg = cfg
        self.layers = []
        in_dim = feature_dim
        for i in range(cfg.hidden_layers):
            self.layers.append(Linear(store, f"{name}.hidden{i}", in_dim, cfg.hidden_width, rng))
            in_dim = cfg.hidden_width
        self.out = Linear(store, f"{name}.out", in_dim, cfg.output_width, rng)

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        for layer in self.layers:
            h = activation(layer(h))
        return self.out(h)


def desk_projector_config() -> ProjectorConfig:
    return ProjectorConfig(hidden_width=256, hidden_layers=3, output_width=64)


def simclr_loss(model: Model, projector: Projector, view_a, view_b,
                temperature: float = NT_XENT_TEMPERATURE,
                rng: np.random.Generator | None = None) -> Tensor:
    """NT-Xent on projected features of two aligned view batches [N,1,T,F]."""
    z_a = projector(forward_features(model, view_a, rng=rng))
    z_b = projector(forward_features(model, view_b, rng=rng))
    return nt_xent(z_a, z_b, temperature=temperature)


def classification_loss(logits, targets, multi_label: bool = False) -> Tensor:
    """Supervised loss: BCE-with-logits (multi-label), softmax CE (single
    label / mixed distributions), or summed per-slot CE for slot lists."""
    if isinstance(logits, (list, tuple)):
        if not isinstance(targets, (list, tuple)) or len(targets) != len(logits):
            raise DimensionError("slot logits and targets must be aligned lists")
        total = None
        for lg, tg in zip(logits, targets):
            term = classification_loss(lg, tg, multi_label=False)
            total = term if total is None else total + term
        return total
    if not isinstance(logits, Tensor):
        logits = Tensor(logits)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim == 1:
        onehot = np.zeros(logits.shape)
        onehot[np.arange(len(targets)), targets.astype(int)] = 1.0
        targets = onehot
    if targets.shape != logits.shape:
        raise DimensionError(f"targets {targets.shape} do not match logits {logits.shape}")
    if np.any(targets < 0) or np.any(targets > 1):
        raise DimensionError("targets must lie in [0, 1]")
    y = Tensor(targets.astype(logits.dtype))
    if multi_label:
        # mean over N*K of sigmoid binary cross-entropy
        return T.tmean(T.softplus(logits) - logits * y)
    log_probs = T.log_softmax(logits, axis=1)
    return -T.tmean(T.tsum(y * log_probs, axis=1))
