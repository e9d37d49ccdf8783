"""SSL objectives (NT-Xent, BYOL, W-MSE, Barlow), pseudo-label cross-entropy, and their combination.

Losses take and return ``Tensor`` objects so gradients flow to whatever
produced the embeddings. Plain arrays are accepted and treated as constants.
Natural log throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .numerics import cholesky_whiten

LOSS_KINDS = ("ntxent", "byol", "wmse2", "barlow")
VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class LossParams:
    loss_kind: str = "barlow"
    temperature: float = 0.1
    lam: float = 5e-3
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.temperature <= 0 or self.lam <= 0 or self.epsilon <= 0:
            raise ValueError("temperature, lambda and epsilon must be positive")


def _pair(z1, z2) -> tuple[Tensor, Tensor]:
    z1, z2 = ad.ensure(z1), ad.ensure(z2)
    if z1.shape != z2.shape or z1.data.ndim != 2:
        raise ValueError(f"views must be matching 2-D batches, got {z1.shape} and {z2.shape}")
    return z1, z2


def nt_xent(z1, z2, temperature: float = 0.1) -> Tensor:
    z1, z2 = _pair(z1, z2)
    b = z1.shape[0]
    if b < 2:
        raise ValueError("NT-Xent needs at least two samples (no negatives otherwise)")
    z = ad.l2_normalize_rows(ad.concat([z1, z2], axis=0))
    sim = (z @ z.T) * (1.0 / temperature)
    n = 2 * b
    # self-similarity never competes in the denominator
    logits = sim + np.where(np.eye(n, dtype=bool), -np.inf, 0.0)
    positive = np.zeros((n, n))
    positive[np.arange(n), (np.arange(n) + b) % n] = 1.0
    pos = (sim * positive).sum(axis=1)
    return (ad.logsumexp(logits, axis=1) - pos).mean()


def _cosine_rows(a: Tensor, b: Tensor) -> Tensor:
    return (ad.l2_normalize_rows(a) * ad.l2_normalize_rows(b)).sum(axis=1)


def byol_loss(online_pred_1, target_proj_2, online_pred_2, target_proj_1) -> Tensor:
    """Symmetric BYOL regression loss; target projections are treated as constants."""
    p1, t2 = _pair(online_pred_1, target_proj_2)
    p2, t1 = _pair(online_pred_2, target_proj_1)
    t1, t2 = Tensor(t1.data), Tensor(t2.data)
    per_row = (2.0 - 2.0 * _cosine_rows(p1, t2)) + (2.0 - 2.0 * _cosine_rows(p2, t1))
    return per_row.mean()


def wmse_loss(z1, z2, epsilon: float = 1e-6) -> Tensor:
    """Whiten each view's batch, project rows to the unit sphere, mean squared row distance."""
    z1, z2 = _pair(z1, z2)
    b, d = z1.shape
    if b < d + 1:
        raise ValueError(f"W-MSE needs batch size >= dim + 1 ({b} < {d + 1})")
    w1 = ad.l2_normalize_rows(cholesky_whiten(z1, epsilon))
    w2 = ad.l2_normalize_rows(cholesky_whiten(z2, epsilon))
    diff = w1 - w2
    return (diff * diff).sum(axis=1).mean()


def standardize_columns(z) -> Tensor:
    z = ad.ensure(z)
    centred = z - z.mean(axis=0, keepdims=True)
    var = (centred * centred).mean(axis=0, keepdims=True)
    return centred / ad.sqrt(var + VARIANCE_FLOOR)


def cross_correlation(z1, z2) -> Tensor:
    """Batch cross-correlation of column-standardized views: ``(1/B) z1^T z2``."""
    z1, z2 = _pair(z1, z2)
    if z1.shape[0] < 2:
        raise ValueError("cross-correlation needs at least two samples")
    return (standardize_columns(z1).T @ standardize_columns(z2)) * (1.0 / z1.shape[0])


def barlow_from_correlation(c, lam: float = 5e-3) -> Tensor:
    c = ad.ensure(c)
    eye = np.eye(c.shape[0], c.shape[1])
    on = (1.0 - c) * eye
    off = c * (1.0 - eye)
    return (on * on).sum() + lam * (off * off).sum()


def barlow_loss(z1, z2, lam: float = 5e-3) -> Tensor:
    return barlow_from_correlation(cross_correlation(z1, z2), lam)


def pseudo_label_ce(logits, labels) -> Tensor:
    logits = ad.ensure(logits)
    labels = np.asarray(labels, dtype=np.int64)
    b, c = logits.shape
    if labels.shape != (b,):
        raise ValueError(f"expected {b} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"pseudo-labels must lie in [0, {c})")
    onehot = np.zeros((b, c))
    onehot[np.arange(b), labels] = 1.0
    return -(ad.log_softmax(logits, axis=1) * onehot).sum(axis=1).mean()


def total_loss(l_ssl, l_ps_1, l_ps_2, alpha: float):
    """``l_ssl + alpha * (l_ps_1 + l_ps_2)``; works on floats or Tensors."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    return l_ssl + alpha * (l_ps_1 + l_ps_2)
