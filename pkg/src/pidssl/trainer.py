"""Three-phase progressive self-supervision: initial SSL training, k-means++
pseudo-labelling, then SSL + pseudo-label classification with a growing weight."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .augment import make_views
from .clustering import PseudoLabelSet, align_labels, assign_pseudo_labels, lloyd_iterate
from .config import RunConfig
from .losses import barlow_loss, byol_loss, nt_xent, pseudo_label_ce, total_loss, wmse_loss
from .models import (
    NetworkSpec,
    OptimizerError,
    OptimizerState,
    adam_step,
    as_tensors,
    classify,
    ema_update,
    forward,
    gradients,
    init_block,
    init_params,
    predict,
)
from .numerics import (
    STREAM_AUGMENT,
    STREAM_CLUSTER,
    STREAM_HEAD,
    STREAM_INIT,
    STREAM_SHUFFLE,
    derive_rng,
    l2_normalize_rows,
)

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, record: dict):
        super().__init__(message)
        self.record = record


@dataclass
class TrainState:
    spec: NetworkSpec
    params: dict
    optimizer: OptimizerState
    target: dict | None = None
    labels: PseudoLabelSet | None = None
    rounds: int = 0

    @property
    def has_head(self) -> bool:
        return "classifier.0.weight" in self.params


def _backbone_keys(params) -> list[str]:
    return [k for k in params if k.startswith(("encoder.", "projector."))]


def init_state(config: RunConfig) -> TrainState:
    spec = config.network
    if config.loss.loss_kind == "byol" and spec.predictor_widths is None:
        spec = replace(spec, predictor_widths=(spec.projection_dim, spec.projection_dim))
    spec = replace(spec, classifier_classes=None)
    params = init_params(spec, derive_rng(config.seed, STREAM_INIT))
    target = None
    if config.loss.loss_kind == "byol":
        target = {k: params[k].copy() for k in _backbone_keys(params)}
    return TrainState(spec, params, OptimizerState(lr=config.lr_at(1), weight_decay=config.weight_decay), target)


def prepare_inputs(x: np.ndarray) -> np.ndarray:
    """Flatten to rows; byte images are scaled to [0, 1]."""
    x = np.asarray(x)
    if x.dtype == np.uint8:
        x = x / 255.0
    return x.reshape(x.shape[0], -1).astype(np.float64)


def _views(batch: np.ndarray, policy, rng) -> tuple[np.ndarray, np.ndarray]:
    v1, v2 = make_views(batch, policy, rng)
    return prepare_inputs(v1), prepare_inputs(v2)


def _ssl_loss(config: RunConfig, state: TrainState, pt: dict, v1, v2):
    spec = state.spec
    z1 = forward(pt, v1, spec, "projector")
    z2 = forward(pt, v2, spec, "projector")
    lp = config.loss
    kind = lp.loss_kind
    if kind == "barlow":
        loss = barlow_loss(z1, z2, lp.lam)
    elif kind == "ntxent":
        loss = nt_xent(z1, z2, lp.temperature)
    elif kind == "wmse2":
        loss = wmse_loss(z1, z2, lp.epsilon)
    else:
        t1 = forward(state.target, v1, spec, "projector")
        t2 = forward(state.target, v2, spec, "projector")
        loss = byol_loss(predict(pt, z1), t2, predict(pt, z2), t1)
    return loss, z1, z2


def train_epoch(config: RunConfig, features: np.ndarray, state: TrainState, epoch: int, phase: str) -> tuple[TrainState, dict]:
    """One pass over shuffled full batches (last partial batch dropped)."""
    alpha = 0.0 if phase == "initial" else config.alpha_at(epoch)
    use_ps = alpha > 0 and state.labels is not None
    lr = config.lr_at(epoch)
    state.optimizer = state.optimizer.with_lr(lr)
    n = features.shape[0]
    bs = config.batch_size
    perm = derive_rng(config.seed, STREAM_SHUFFLE, epoch).permutation(n)
    aug_rng = derive_rng(config.seed, STREAM_AUGMENT, epoch)
    sums = {"loss_total": 0.0, "loss_ssl": 0.0, "loss_ps": 0.0}
    batches = 0
    trainable = _backbone_keys(state.params) + [k for k in state.params if k.startswith("predictor.")]
    if use_ps:
        trainable += [k for k in state.params if k.startswith("classifier.")]
    for start in range(0, n - bs + 1, bs):
        idx = perm[start : start + bs]
        v1, v2 = _views(features[idx], config.augmentation, aug_rng)
        pt = as_tensors(state.params, trainable)
        l_ssl, z1, z2 = _ssl_loss(config, state, pt, v1, v2)
        if use_ps:
            y = state.labels.labels[idx]
            ce1 = pseudo_label_ce(classify(pt, z1), y)
            ce2 = pseudo_label_ce(classify(pt, z2), y)
            loss = total_loss(l_ssl, ce1, ce2, alpha)
            sums["loss_ps"] += ce1.item() + ce2.item()
        else:
            loss = l_ssl
        value = loss.item()
        if not math.isfinite(value):
            record = {"epoch": epoch, "phase": phase, "batch": batches, "loss_total": None, "error": "non-finite loss"}
            raise TrainingAborted(f"non-finite loss at epoch {epoch}, batch {batches}", record)
        loss.backward()
        try:
            state.params, state.optimizer = adam_step(state.params, gradients(pt), state.optimizer)
        except OptimizerError as exc:
            record = {"epoch": epoch, "phase": phase, "batch": batches, "loss_total": value, "error": str(exc)}
            raise TrainingAborted(str(exc), record) from exc
        if state.target is not None:
            online = {k: state.params[k] for k in state.target}
            state.target = ema_update(online, state.target, config.ema_momentum)
        sums["loss_total"] += value
        sums["loss_ssl"] += l_ssl.item()
        batches += 1
    if batches == 0:
        raise ValueError(f"batch size {bs} exceeds the {n} training samples")
    record = {
        "epoch": epoch,
        "phase": phase,
        "lr": lr,
        "alpha": alpha,
        "loss_total": sums["loss_total"] / batches,
        "loss_ssl": sums["loss_ssl"] / batches,
        "loss_ps": sums["loss_ps"] / batches if use_ps else None,
        "round": state.labels.round if state.labels is not None else None,
        "purity": None,
        "seed": config.seed,
    }
    return state, record


def initial_training(config: RunConfig, features: np.ndarray, state: TrainState) -> tuple[TrainState, list[dict]]:
    records = []
    for epoch in range(1, config.initial_epochs + 1):
        state, record = train_epoch(config, features, state, epoch, "initial")
        log.debug("epoch %d initial loss %.5f", epoch, record["loss_total"])
        records.append(record)
    return state, records


def embed_all(state: TrainState, features: np.ndarray, stage: str = "projector", chunk: int = 1024) -> np.ndarray:
    x = prepare_inputs(features)
    parts = [forward(state.params, x[i : i + chunk], state.spec, stage).data for i in range(0, x.shape[0], chunk)]
    return np.concatenate(parts, axis=0)


def pseudo_label_round(
    config: RunConfig, state: TrainState, features: np.ndarray, k: int, round_index: int
) -> tuple[PseudoLabelSet, bool]:
    """Cluster projector outputs of the un-augmented samples with the weights fixed.

    Returns the (aligned) label set and whether the classifier head must be
    re-initialized because K changed.
    """
    if k > features.shape[0]:
        raise ValueError(f"K={k} exceeds the {features.shape[0]} samples")
    emb = embed_all(state, features, "projector")
    rng = derive_rng(config.seed, STREAM_CLUSTER, round_index)
    prev = state.labels
    if config.warm_start and prev is not None and prev.k == k:
        points = l2_normalize_rows(emb)
        centroids, labels, _ = lloyd_iterate(points, prev.centroids)
        new = PseudoLabelSet(labels, k, round_index, centroids)
    else:
        new = assign_pseudo_labels(emb, k, rng, round_index)
    if prev is None or prev.k != k:
        return new, True
    return align_labels(prev, new), False


def _without_head(moments: dict) -> dict:
    return {k: v for k, v in moments.items() if not k.startswith("classifier.")}


def _install_labels(config: RunConfig, state: TrainState, labels: PseudoLabelSet, reinit: bool) -> None:
    state.labels = labels
    state.rounds += 1
    if reinit or not state.has_head:
        head = init_block(derive_rng(config.seed, STREAM_HEAD, labels.round), "classifier", [(state.spec.projection_dim, labels.k)])
        state.params = {**{k: v for k, v in state.params.items() if not k.startswith("classifier.")}, **head}
        opt = state.optimizer
        state.optimizer = replace(
            opt, first_moment=_without_head(opt.first_moment), second_moment=_without_head(opt.second_moment)
        )
        state.spec = replace(state.spec, classifier_classes=labels.k)


RoundHook = Callable[[PseudoLabelSet], dict]


def progressive_training(
    config: RunConfig,
    features: np.ndarray,
    state: TrainState,
    on_round: RoundHook | None = None,
) -> tuple[TrainState, list[dict]]:
    """Epochs initial_epochs+1 .. total_epochs with SSL + weighted pseudo-label CE.

    Every ``recluster_interval`` epochs of this phase the labels are
    regenerated from the current weights (unless re-clustering is disabled).
    """
    if state.labels is None:
        raise ValueError("progressive training needs an initial pseudo-label set")
    records = []
    for epoch in range(config.initial_epochs + 1, config.total_epochs + 1):
        state, record = train_epoch(config, features, state, epoch, "progressive")
        offset = epoch - config.initial_epochs
        if config.recluster and offset % config.recluster_interval == 0:
            labels, reinit = pseudo_label_round(config, state, features, config.n_clusters, state.rounds)
            _install_labels(config, state, labels, reinit)
            record["round"] = labels.round
            if on_round is not None:
                record.update(on_round(labels))
        records.append(record)
    return state, records


def train(config: RunConfig, features: np.ndarray, on_round: RoundHook | None = None) -> tuple[TrainState, list[dict]]:
    """Run all three phases on unlabeled features; returns the final state and per-epoch records."""
    state = init_state(config)
    expected = state.spec.input_dim
    if prepare_inputs(features[:1]).shape[1] != expected:
        raise ValueError(f"dataset rows have {prepare_inputs(features[:1]).shape[1]} values, network expects {expected}")
    state, records = initial_training(config, features, state)
    if config.total_epochs > config.initial_epochs:
        labels, reinit = pseudo_label_round(config, state, features, config.n_clusters, 0)
        _install_labels(config, state, labels, reinit)
        if records:
            records[-1]["round"] = labels.round
            if on_round is not None:
                records[-1].update(on_round(labels))
        elif on_round is not None:
            on_round(labels)
        state, more = progressive_training(config, features, state, on_round)
        records.extend(more)
    return state, records
