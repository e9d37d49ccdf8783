"""k-NN and linear-probe evaluation, plus redundancy and PID diagnostics on embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .losses import cross_correlation, pseudo_label_ce
from .models import OptimizerState, adam_step, forward_embed, init_block
from .numerics import STREAM_PROBE, as_matrix, derive_rng, l2_normalize_rows
from .pid import JointPMF, PIDResult, decompose, discretize


@dataclass(frozen=True)
class EvalConfig:
    k: int = 5
    probe_epochs: int = 100
    probe_lr: float = 1e-3
    probe_batch_size: int = 64
    train_fraction: float = 0.8
    test_fraction: float = 0.2
    bins: int = 8

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.probe_epochs < 0 or self.probe_lr <= 0 or self.probe_batch_size < 1:
            raise ValueError("invalid probe settings")
        if abs(self.train_fraction + self.test_fraction - 1.0) > 1e-9:
            raise ValueError("train and test fractions must sum to 1")
        if not 0 < self.train_fraction < 1:
            raise ValueError("both splits must be non-empty fractions")
        if not 1 <= self.bins <= 64:
            raise ValueError("bins must lie in [1, 64]")


def knn_predict(train_x, train_y, test_x, k: int = 5) -> np.ndarray:
    """Cosine k-NN majority vote.

    Vote ties go to the tied class whose nearest member ranks first, then to
    the lowest class id.
    """
    train_x = l2_normalize_rows(as_matrix(train_x, "train embeddings"))
    test_x = l2_normalize_rows(as_matrix(test_x, "test embeddings"))
    train_y = np.asarray(train_y, dtype=np.int64)
    if train_x.shape[0] == 0 or test_x.shape[0] == 0:
        raise ValueError("train and test sets must be non-empty")
    if not 1 <= k <= train_x.shape[0]:
        raise ValueError(f"k must lie in [1, {train_x.shape[0]}]")
    sim = test_x @ train_x.T
    # stable sort: equal similarities keep training-set order
    order = np.argsort(-sim, axis=1, kind="stable")[:, :k]
    preds = np.empty(test_x.shape[0], dtype=np.int64)
    for i, neigh in enumerate(order):
        votes = train_y[neigh]
        classes, counts = np.unique(votes, return_counts=True)
        tied = classes[counts == counts.max()]
        if tied.size == 1:
            preds[i] = tied[0]
            continue
        best = None
        for c in tied:
            nearest_sim = sim[i, neigh[votes == c][0]]
            key = (-nearest_sim, c)
            if best is None or key < best:
                best = key
        preds[i] = best[1]
    return preds


def knn_eval(train_x, train_y, test_x, test_y, k: int = 5) -> float:
    preds = knn_predict(train_x, train_y, test_x, k)
    return float(np.mean(preds == np.asarray(test_y, dtype=np.int64)))


def train_linear_classifier(features, labels, n_classes: int, config: EvalConfig, seed: int = 0) -> dict:
    x = as_matrix(features, "features")
    y = np.asarray(labels, dtype=np.int64)
    params = init_block(derive_rng(seed, STREAM_PROBE, 0), "probe", [(x.shape[1], n_classes)])
    state = OptimizerState(lr=config.probe_lr)
    bs = min(config.probe_batch_size, x.shape[0])
    for epoch in range(config.probe_epochs):
        perm = derive_rng(seed, STREAM_PROBE, 1, epoch).permutation(x.shape[0])
        for start in range(0, x.shape[0] - bs + 1, bs):
            idx = perm[start : start + bs]
            w = Tensor(params["probe.0.weight"], requires_grad=True)
            b = Tensor(params["probe.0.bias"], requires_grad=True)
            loss = pseudo_label_ce(Tensor(x[idx]) @ w + b, y[idx])
            loss.backward()
            params, state = adam_step(params, {"probe.0.weight": w.grad, "probe.0.bias": b.grad}, state)
    return params


def linear_probe_accuracy(train_x, train_y, test_x, test_y, config: EvalConfig | None = None, seed: int = 0) -> float:
    """Fit a fresh softmax-linear classifier on frozen features, return test accuracy."""
    config = config or EvalConfig()
    train_y = np.asarray(train_y, dtype=np.int64)
    test_y = np.asarray(test_y, dtype=np.int64)
    n_classes = int(max(train_y.max(), test_y.max())) + 1
    params = train_linear_classifier(train_x, train_y, n_classes, config, seed)
    logits = as_matrix(test_x, "test features") @ params["probe.0.weight"] + params["probe.0.bias"]
    return float(np.mean(np.argmax(logits, axis=1) == test_y))


def linear_probe(params, spec, train_x, train_y, test_x, test_y, config: EvalConfig | None = None, seed: int = 0) -> float:
    """Linear probe on encoder outputs; the encoder parameters are only read."""
    frozen = {k: v for k, v in params.items() if k.startswith("encoder.")}
    f_train = forward_embed(frozen, train_x, spec, "encoder")
    f_test = forward_embed(frozen, test_x, spec, "encoder")
    return linear_probe_accuracy(f_train, train_y, f_test, test_y, config, seed)


def redundancy_proxy(z1, z2) -> dict:
    """Standardized cross-correlation between two views and its summary statistics."""
    c = cross_correlation(as_matrix(z1, "z1"), as_matrix(z2, "z2")).data
    d = min(c.shape)
    diag = np.diagonal(c)
    off = c[~np.eye(*c.shape, dtype=bool)]
    return {
        "correlation": c,
        "mean_abs_offdiag": float(np.abs(off).mean()) if off.size else 0.0,
        "mean_diag": float(diag[:d].mean()),
    }


def pid_diagnostic(z1_column, z2_column, labels, bins: int = 8) -> PIDResult:
    """PID of what two scalar embedding coordinates carry about the labels."""
    z1_column = np.asarray(z1_column, dtype=np.float64).ravel()
    z2_column = np.asarray(z2_column, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if not (z1_column.size == z2_column.size == labels.size):
        raise ValueError("columns and labels must have matching lengths")
    s1 = discretize(z1_column, bins)
    s2 = discretize(z2_column, bins)
    return decompose(JointPMF.from_samples(s1, s2, labels))


def pid_summary(z1, z2, labels, bins: int = 8) -> dict[str, float]:
    """Per-dimension PID of matching coordinates of two views, averaged over dimensions."""
    z1, z2 = as_matrix(z1, "z1"), as_matrix(z2, "z2")
    if z1.shape != z2.shape:
        raise ValueError("views must have matching shapes")
    results = [pid_diagnostic(z1[:, j], z2[:, j], labels, bins).as_dict() for j in range(z1.shape[1])]
    return {key: float(np.mean([r[key] for r in results])) for key in results[0]}
