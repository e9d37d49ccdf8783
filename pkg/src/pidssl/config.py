"""Run configuration: schedules, profiles, and the TOML file format."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import tomli
import tomli_w

from .augment import ImagePolicy, VectorPolicy
from .evaluation import EvalConfig
from .losses import LossParams
from .models import NetworkSpec


class ConfigError(ValueError):
    pass


Band = tuple[int, int, float]


def _bands(raw) -> tuple[Band, ...]:
    out = []
    for band in raw:
        if len(band) != 3:
            raise ConfigError(f"schedule band must be [start, end, value], got {band!r}")
        start, end, value = band
        out.append((int(start), int(end), float(value)))
    return tuple(out)


def _check_bands(bands: tuple[Band, ...], what: str) -> None:
    prev_end = 0
    for start, end, value in bands:
        if start < 1 or end < start:
            raise ConfigError(f"{what} band ({start}, {end}) is not a valid epoch range")
        if start <= prev_end:
            raise ConfigError(f"{what} bands overlap or are out of order at epoch {start}")
        if value < 0:
            raise ConfigError(f"{what} values must be non-negative")
        prev_end = end


@dataclass(frozen=True)
class AlphaSchedule:
    """Piecewise-constant weight of the pseudo-label term; zero outside every band."""

    bands: tuple[Band, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "bands", _bands(self.bands))
        _check_bands(self.bands, "alpha")

    def __call__(self, epoch: int) -> float:
        return alpha_at(self, epoch)


def alpha_at(schedule: AlphaSchedule, epoch: int) -> float:
    if epoch < 1:
        raise ValueError("epochs are counted from 1")
    for start, end, value in schedule.bands:
        if start <= epoch <= end:
            return value
    return 0.0


CANONICAL_ALPHA = AlphaSchedule(
    ((101, 200, 1e-5), (201, 400, 1e-4), (401, 600, 1e-3), (601, 800, 1e-2), (801, 1000, 1e-1))
)


def scaled_alpha_schedule(initial_epochs: int, total_epochs: int) -> AlphaSchedule:
    """Desk-scale bands over the progressive phase.

    The first 12.5% of the phase uses 1e-5, then 25% each at 1e-4, 1e-3 and
    1e-2; the remainder runs at 1e-1.
    """
    length = total_epochs - initial_epochs
    cuts = [0, round(0.125 * length), round(0.375 * length), round(0.625 * length), round(0.875 * length), length]
    values = (1e-5, 1e-4, 1e-3, 1e-2, 1e-1)
    bands = []
    for lo, hi, value in zip(cuts[:-1], cuts[1:], values):
        if hi > lo:
            bands.append((initial_epochs + lo + 1, initial_epochs + hi, value))
    return AlphaSchedule(tuple(bands))


@dataclass(frozen=True)
class RunConfig:
    name: str = "desk"
    seed: int = 0
    initial_epochs: int = 20
    total_epochs: int = 100
    recluster_interval: int = 10
    recluster: bool = True
    warm_start: bool = False
    n_clusters: int = 10
    batch_size: int = 64
    weight_decay: float = 1e-6
    control_mode: bool = False
    ema_momentum: float = 0.99
    lr_schedule: tuple[Band, ...] = ((1, 100, 1e-3),)
    alpha_schedule: AlphaSchedule = field(default_factory=lambda: scaled_alpha_schedule(20, 100))
    loss: LossParams = field(default_factory=LossParams)
    network: NetworkSpec = field(default_factory=NetworkSpec)
    augmentation: VectorPolicy | ImagePolicy = field(
        default_factory=lambda: VectorPolicy(noise_sigma=0.5, mask_prob=0.2, scale_range=(0.8, 1.2))
    )
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        object.__setattr__(self, "lr_schedule", _bands(self.lr_schedule))
        if not 0 <= self.initial_epochs < self.total_epochs:
            raise ConfigError("need 0 <= initial_epochs < total_epochs")
        if self.recluster_interval <= 0:
            raise ConfigError("recluster_interval must be positive")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2")
        if self.n_clusters < 1:
            raise ConfigError("n_clusters must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if not 0 <= self.ema_momentum <= 1:
            raise ConfigError("ema_momentum must lie in [0, 1]")
        _check_bands(self.lr_schedule, "lr")
        covered = set()
        for start, end, value in self.lr_schedule:
            if value <= 0:
                raise ConfigError("learning rates must be positive")
            covered.update(range(start, end + 1))
        missing = set(range(1, self.total_epochs + 1)) - covered
        if missing:
            raise ConfigError(f"lr_schedule does not cover epoch {min(missing)}")

    def alpha_at(self, epoch: int) -> float:
        return 0.0 if self.control_mode else alpha_at(self.alpha_schedule, epoch)

    def lr_at(self, epoch: int) -> float:
        for start, end, value in self.lr_schedule:
            if start <= epoch <= end:
                return value
        raise ConfigError(f"no learning rate for epoch {epoch}")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "alpha_schedule":
                out["alpha_bands"] = [list(b) for b in value.bands]
            elif f.name == "lr_schedule":
                out["lr_schedule"] = [list(b) for b in value]
            elif f.name == "loss":
                out["loss"] = {"kind": value.loss_kind, "temperature": value.temperature, "lambda": value.lam, "epsilon": value.epsilon}
            elif f.name == "network":
                net = {"encoder_widths": list(value.encoder_widths), "projector_widths": list(value.projector_widths)}
                if value.predictor_widths is not None:
                    net["predictor_widths"] = list(value.predictor_widths)
                out["network"] = net
            elif f.name == "augmentation":
                kind = "vector" if isinstance(value, VectorPolicy) else "image"
                out["augmentation"] = {"kind": kind, **{k: list(v) if isinstance(v, tuple) else v for k, v in asdict(value).items()}}
            elif f.name == "eval":
                out["eval"] = asdict(value)
            else:
                out[f.name] = value
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> RunConfig:
        data = dict(data)
        known = {f.name for f in fields(cls)} - {"alpha_schedule"} | {"alpha_bands"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs: dict[str, Any] = {}
        try:
            for key, value in data.items():
                if key == "alpha_bands":
                    kwargs["alpha_schedule"] = AlphaSchedule(_bands(value))
                elif key == "lr_schedule":
                    kwargs["lr_schedule"] = _bands(value)
                elif key == "loss":
                    kwargs["loss"] = _section(LossParams, value, {"kind": "loss_kind", "lambda": "lam"})
                elif key == "network":
                    kwargs["network"] = _section(NetworkSpec, value, {}, exclude={"classifier_classes"})
                elif key == "augmentation":
                    section = dict(value)
                    kind = section.pop("kind", "vector")
                    policy = {"vector": VectorPolicy, "image": ImagePolicy}.get(kind)
                    if policy is None:
                        raise ConfigError(f"augmentation kind must be 'vector' or 'image', got {kind!r}")
                    kwargs["augmentation"] = _section(policy, section, {})
                elif key == "eval":
                    kwargs["eval"] = _section(EvalConfig, value, {})
                else:
                    kwargs[key] = value
            return cls(**kwargs)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def _section(cls, raw: Mapping, renames: dict[str, str], exclude: set[str] = frozenset()):
    if not isinstance(raw, Mapping):
        raise ConfigError(f"section for {cls.__name__} must be a table")
    allowed = {renames.get(k, k) for k in raw}
    names = {f.name for f in fields(cls)} - set(exclude)
    inverse = {v: k for k, v in renames.items()}
    unknown = sorted(inverse.get(k, k) for k in allowed - names)
    if unknown:
        raise ConfigError(f"unknown keys in {cls.__name__} section: {unknown}")
    return cls(**{renames.get(k, k): v for k, v in raw.items()})


def load_config(path: str | Path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return RunConfig.from_dict(data)


def dump_config(config: RunConfig) -> str:
    return tomli_w.dumps(config.to_dict())


def save_config(config: RunConfig, path: str | Path) -> None:
    Path(path).write_text(dump_config(config))


def desk_config(seed: int = 0, **overrides) -> RunConfig:
    """20 initial + 80 progressive epochs, re-cluster every 10, scaled alpha bands, Adam lr 1e-3."""
    return RunConfig(seed=seed, **overrides)


def canonical_config(seed: int = 0, **overrides) -> RunConfig:
    """The full-length protocol: 100 + 900 epochs, re-cluster every 100, five alpha bands."""
    base = dict(
        name="canonical",
        seed=seed,
        initial_epochs=100,
        total_epochs=1000,
        recluster_interval=100,
        lr_schedule=((1, 20, 0.1), (21, 1000, 1e-3)),
        alpha_schedule=CANONICAL_ALPHA,
        weight_decay=1e-6,
        loss=LossParams("barlow", temperature=0.1, lam=5e-3),
    )
    base.update(overrides)
    return RunConfig(**base)


def ablation_c_config(seed: int = 0, **overrides) -> RunConfig:
    """Non-progressive double supervision: one pseudo-label round, fixed alpha = 0.1.

    The desk version keeps the 80/20 split of the full-length ablation
    (800 initial + 200 supervised epochs).
    """
    base = dict(
        name="ablation_c",
        seed=seed,
        initial_epochs=80,
        total_epochs=100,
        recluster=False,
        alpha_schedule=AlphaSchedule(((81, 100, 1e-1),)),
    )
    base.update(overrides)
    return RunConfig(**base)
