"""MLP encoder, three-layer projector, linear classifier head, BYOL predictor; Adam; checkpoints."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

ParameterSet = dict[str, np.ndarray]

STAGES = ("encoder", "projector", "classifier", "predictor")
CHECKPOINT_MAGIC = b"PSSL"
CHECKPOINT_VERSION = 1


class OptimizerError(ArithmeticError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkSpec:
    encoder_widths: tuple[int, ...] = (32, 128, 64)
    projector_widths: tuple[int, int, int] = (64, 64, 32)
    predictor_widths: tuple[int, ...] | None = None
    classifier_classes: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "encoder_widths", tuple(int(w) for w in self.encoder_widths))
        object.__setattr__(self, "projector_widths", tuple(int(w) for w in self.projector_widths))
        if self.predictor_widths is not None:
            object.__setattr__(self, "predictor_widths", tuple(int(w) for w in self.predictor_widths))
        if len(self.encoder_widths) < 2:
            raise ValueError("encoder_widths needs the input width and at least one layer")
        if len(self.projector_widths) != 3:
            raise ValueError("the projector has exactly three layers")
        if self.predictor_widths is not None and len(self.predictor_widths) != 2:
            raise ValueError("the predictor has exactly two layers")
        widths = list(self.encoder_widths) + list(self.projector_widths) + list(self.predictor_widths or ())
        if any(w <= 0 for w in widths):
            raise ValueError("layer widths must be positive")
        if self.classifier_classes is not None and self.classifier_classes < 1:
            raise ValueError("classifier_classes must be positive")

    @property
    def input_dim(self) -> int:
        return self.encoder_widths[0]

    @property
    def embed_dim(self) -> int:
        return self.encoder_widths[-1]

    @property
    def projection_dim(self) -> int:
        return self.projector_widths[-1]

    def layer_shapes(self) -> dict[str, list[tuple[int, int]]]:
        shapes = {
            "encoder": list(zip(self.encoder_widths[:-1], self.encoder_widths[1:])),
            "projector": list(zip((self.embed_dim,) + self.projector_widths[:-1], self.projector_widths)),
        }
        if self.predictor_widths is not None:
            shapes["predictor"] = list(zip((self.projection_dim,) + self.predictor_widths[:-1], self.predictor_widths))
        if self.classifier_classes is not None:
            shapes["classifier"] = [(self.projection_dim, self.classifier_classes)]
        return shapes

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> NetworkSpec:
        return cls(**data)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_block(rng: np.random.Generator, prefix: str, shapes: list[tuple[int, int]]) -> ParameterSet:
    params: ParameterSet = {}
    for i, (fan_in, fan_out) in enumerate(shapes):
        params[f"{prefix}.{i}.weight"] = _glorot(rng, fan_in, fan_out)
        params[f"{prefix}.{i}.bias"] = np.zeros(fan_out)
    return params


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> ParameterSet:
    """Uniform Glorot weights and zero biases for every block in the network layout."""
    params: ParameterSet = {}
    for prefix, shapes in spec.layer_shapes().items():
        params.update(init_block(rng, prefix, shapes))
    return params


def _mlp(params: Mapping, prefix: str, n_layers: int, x: Tensor, activate_last: bool) -> Tensor:
    for i in range(n_layers):
        x = x @ params[f"{prefix}.{i}.weight"] + params[f"{prefix}.{i}.bias"]
        if i < n_layers - 1 or activate_last:
            x = ad.relu(x)
    return x


def forward(params: Mapping, x, spec: NetworkSpec, stage: str = "projector") -> Tensor:
    """Differentiable forward pass up to ``stage``.

    ``params`` may hold numpy arrays or Tensors; pass Tensors with
    ``requires_grad=True`` to get parameter gradients from ``backward``.
    Hidden layers are ReLU, the final layer of every block is linear.
    """
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}; expected one of {STAGES}")
    x = ad.ensure(x)
    if x.data.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ValueError(f"batch shape {x.shape} does not match input width {spec.input_dim}")
    params = {k: ad.ensure(v) for k, v in params.items()}
    h = _mlp(params, "encoder", len(spec.encoder_widths) - 1, x, activate_last=False)
    if stage == "encoder":
        return h
    z = _mlp(params, "projector", 3, h, activate_last=False)
    if stage == "projector":
        return z
    if stage == "classifier":
        return classify(params, z)
    if spec.predictor_widths is None:
        raise ValueError("this network has no predictor")
    return predict(params, z)


def classify(params: Mapping, z: Tensor) -> Tensor:
    return _mlp(params, "classifier", 1, z, activate_last=False)


def predict(params: Mapping, z: Tensor) -> Tensor:
    return _mlp(params, "predictor", 2, z, activate_last=False)


def forward_embed(params: Mapping, batch, spec: NetworkSpec, stage: str = "projector") -> np.ndarray:
    return forward(params, np.asarray(batch, dtype=np.float64), spec, stage).data


def as_tensors(params: ParameterSet, names=None) -> dict[str, Tensor]:
    """Wrap parameters for gradient tracking; names not listed stay constant."""
    names = params.keys() if names is None else set(names)
    return {k: Tensor(v, requires_grad=k in names) for k, v in params.items()}


def gradients(tensors: Mapping[str, Tensor]) -> ParameterSet:
    return {
        k: (np.zeros_like(t.data) if t.grad is None else t.grad)
        for k, t in tensors.items()
        if t.requires_grad
    }


def _check_shapes(a: Mapping, b: Mapping) -> None:
    if a.keys() != b.keys() or any(a[k].shape != b[k].shape for k in a):
        raise ValueError("parameter sets are not shape-matched")


def ema_update(online: Mapping, target: Mapping, momentum: float) -> ParameterSet:
    if not 0.0 <= momentum <= 1.0:
        raise ValueError("momentum must lie in [0, 1]")
    _check_shapes(online, target)
    return {k: momentum * target[k] + (1.0 - momentum) * online[k] for k in target}


@dataclass(frozen=True)
class OptimizerState:
    lr: float
    weight_decay: float = 0.0
    step: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def with_lr(self, lr: float) -> OptimizerState:
        return replace(self, lr=lr)


def adam_step(params: Mapping, grads: Mapping, state: OptimizerState) -> tuple[ParameterSet, OptimizerState]:
    """One Adam update with bias correction and decoupled weight decay.

    Only parameters present in ``grads`` are touched. Decay is applied as
    ``p * (1 - lr * wd)`` before the moment-based step.
    """
    if state.lr <= 0:
        raise ValueError("learning rate must be positive")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise OptimizerError(f"non-finite gradient for {name}")
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape mismatch for {name}")
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    m_all = dict(state.first_moment)
    v_all = dict(state.second_moment)
    out = dict(params)
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    for name, g in grads.items():
        m = b1 * m_all.get(name, 0.0) + (1.0 - b1) * g
        v = b2 * v_all.get(name, 0.0) + (1.0 - b2) * g * g
        m_all[name], v_all[name] = m, v
        p = params[name] * (1.0 - state.lr * state.weight_decay)
        out[name] = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return out, replace(state, step=step, first_moment=m_all, second_moment=v_all)


def parameter_checksum(params: Mapping) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name], dtype="<f8").tobytes())
    return h.hexdigest()


def save_checkpoint(path: str | Path, spec: NetworkSpec, params: Mapping, metadata: Mapping | None = None) -> None:
    """Versioned binary checkpoint: magic, version, JSON header, raw little-endian float64 tensors."""
    names = list(params)
    header = {
        "network": spec.to_dict(),
        "metadata": dict(metadata or {}),
        "tensors": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(params[n], dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[NetworkSpec, ParameterSet, dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    offset = 12 + hlen
    header = json.loads(raw[12:offset].decode("utf-8"))
    params: ParameterSet = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated tensor {entry['name']}")
        params[entry["name"]] = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).astype(np.float64)
        offset = end
    if offset != len(raw):
        raise CheckpointError(f"{path}: trailing bytes after tensors")
    return NetworkSpec.from_dict(header["network"]), params, header["metadata"]
