"""End-to-end run: split, train on unlabeled features, evaluate, persist artifacts."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .augment import make_views
from .clustering import PseudoLabelSet, purity
from .config import RunConfig
from .data import Dataset
from .evaluation import knn_eval, linear_probe_accuracy, pid_summary, redundancy_proxy
from .models import parameter_checksum, save_checkpoint
from .numerics import STREAM_AUGMENT, STREAM_SPLIT, derive_rng
from .trainer import TrainingAborted, embed_all, prepare_inputs, train

# augmentation counter reserved for evaluation views (training uses epoch numbers)
EVAL_VIEW_COUNTER = 10**9


@dataclass
class RunReport:
    config: dict
    seed: int
    metrics: list[dict] = field(default_factory=list)
    rounds: list[dict] = field(default_factory=list)
    knn_accuracy: float | None = None
    linear_probe_accuracy: float | None = None
    diagnostics: dict = field(default_factory=dict)
    checkpoint: str | None = None
    status: str = "ok"
    failure: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def split_indices(n: int, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = derive_rng(seed, STREAM_SPLIT).permutation(n)
    n_train = int(round(n * train_fraction))
    if not 0 < n_train < n:
        raise ValueError("split leaves an empty train or test set")
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.generic):
        return _clean(value.item())
    return value


def write_metrics(records: list[dict], path: str | Path) -> None:
    with open(path, "w") as fh:
        for record in records:
            fh.write(json.dumps(_clean(record), sort_keys=True) + "\n")


def evaluate(state, config: RunConfig, train_set: Dataset, test_set: Dataset, probe: bool = True) -> dict:
    """k-NN and linear probe on encoder outputs, plus redundancy/PID diagnostics of two test views."""
    f_train = embed_all(state, train_set.features, "encoder")
    f_test = embed_all(state, test_set.features, "encoder")
    out = {"knn_accuracy": knn_eval(f_train, train_set.labels, f_test, test_set.labels, config.eval.k)}
    if probe:
        out["linear_probe_accuracy"] = linear_probe_accuracy(
            f_train, train_set.labels, f_test, test_set.labels, config.eval, config.seed
        )
    rng = derive_rng(config.seed, STREAM_AUGMENT, EVAL_VIEW_COUNTER)
    v1, v2 = make_views(test_set.features, config.augmentation, rng)
    e1 = embed_all(state, prepare_inputs(v1), "encoder")
    e2 = embed_all(state, prepare_inputs(v2), "encoder")
    proxy = redundancy_proxy(e1, e2)
    out["diagnostics"] = {
        "redundancy_mean_abs_offdiag": proxy["mean_abs_offdiag"],
        "redundancy_mean_diag": proxy["mean_diag"],
        "pid_mean": pid_summary(e1, e2, test_set.labels, config.eval.bins),
    }
    return out


def run_pipeline(
    config: RunConfig, dataset: Dataset, out_dir: str | Path | None = None, probe: bool = True
) -> RunReport:
    """Train on the unlabeled train split, evaluate with held-out labels, optionally persist.

    Ground-truth labels only feed the purity hook and evaluation; the trainer
    sees ``features`` alone.
    """
    if dataset.labels is None:
        raise ValueError("evaluation needs a labelled dataset")
    train_idx, test_idx = split_indices(dataset.n, config.eval.train_fraction, config.seed)
    train_set, test_set = dataset.subset(train_idx), dataset.subset(test_idx)
    report = RunReport(config=config.to_dict(), seed=config.seed)
    truth = train_set.labels

    def on_round(labels: PseudoLabelSet) -> dict:
        value = purity(labels, truth)
        report.rounds.append({"round": labels.round, "purity": value})
        return {"purity": value}

    state = None
    try:
        state, records = train(config, train_set.features, on_round)
        report.metrics = records
        result = evaluate(state, config, train_set, test_set, probe=probe)
        report.knn_accuracy = result["knn_accuracy"]
        report.linear_probe_accuracy = result.get("linear_probe_accuracy")
        report.diagnostics = result["diagnostics"]
        report.diagnostics["encoder_checksum"] = parameter_checksum(
            {k: v for k, v in state.params.items() if k.startswith("encoder.")}
        )
    except TrainingAborted as exc:
        report.status = "failed"
        report.failure = str(exc)
        report.metrics.append(exc.record)
    if out_dir is not None:
        persist(report, state, config, out_dir)
    return report


def persist(report: RunReport, state, config: RunConfig, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if state is not None and report.status == "ok":
        ckpt = out / "checkpoint.pssl"
        save_checkpoint(ckpt, state.spec, state.params, {"config": config.to_dict(), "seed": config.seed})
        report.checkpoint = ckpt.name
    write_metrics(report.metrics, out / "metrics.jsonl")
    (out / "report.json").write_text(json.dumps(_clean(report.to_dict()), sort_keys=True, indent=2) + "\n")


def load_report(path: str | Path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    return json.loads(path.read_text())
