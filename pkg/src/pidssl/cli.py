"""Command-line entry point: decompose, synth, train, eval, report.

Exit codes: 0 success, 2 usage error (bad flags, config, or input files),
3 runtime failure. Errors go to stderr as a single JSON line.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, ablation_c_config, canonical_config, desk_config, load_config
from .data import Dataset, DatasetError, load_dataset, save_csv, synth_blobs
from .models import CheckpointError, OptimizerState, load_checkpoint
from .pid import PMFValidationError, decompose, load_pmf_csv
from .pipeline import _clean, evaluate, load_report, run_pipeline, split_indices
from .trainer import TrainState

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3
PROFILES = {"desk": desk_config, "canonical": canonical_config, "ablation_c": ablation_c_config}
PLOT_FIELDS = ["run", "epoch", "phase", "loss_total", "loss_ssl", "loss_ps", "alpha", "lr", "round", "purity", "knn_accuracy"]


class UsageError(Exception):
    pass


class RunFailed(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _emit(obj, out: str | None) -> None:
    text = json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _dataset(args) -> Dataset:
    if args.data is None:
        return synth_blobs()
    return load_dataset(args.data, getattr(args, "labels", None))


def cmd_decompose(args) -> int:
    pmf = load_pmf_csv(args.pmf)
    result = decompose(pmf).as_dict()
    result["alphabet_sizes"] = list(pmf.alphabet_sizes)
    _emit(result, args.out)
    return EXIT_OK


def cmd_synth(args) -> int:
    data = synth_blobs(args.blobs, args.dim, args.per_blob, args.separation, args.sigma, args.seed)
    save_csv(data, args.out)
    return EXIT_OK


def _run_config(args) -> RunConfig:
    if args.config and args.profile:
        raise UsageError("--config and --profile are mutually exclusive")
    config = load_config(args.config) if args.config else PROFILES[args.profile or "desk"]()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.control:
        changes["control_mode"] = True
    if args.name:
        changes["name"] = args.name
    if changes:
        config = RunConfig.from_dict({**config.to_dict(), **changes})
    return config


def cmd_train(args) -> int:
    config = _run_config(args)
    data = _dataset(args)
    if data.input_dim != config.network.input_dim:
        raise UsageError(f"dataset rows have {data.input_dim} values but the network expects {config.network.input_dim}")
    report = run_pipeline(config, data, args.out, probe=not args.no_probe)
    if report.status != "ok":
        raise RunFailed(report.failure)
    summary = {"name": config.name, "seed": config.seed, "knn_accuracy": report.knn_accuracy,
               "linear_probe_accuracy": report.linear_probe_accuracy, "out": str(args.out)}
    _emit(summary, None)
    return EXIT_OK


def cmd_eval(args) -> int:
    spec, params, meta = load_checkpoint(args.checkpoint)
    if "config" not in meta:
        raise UsageError("checkpoint carries no config echo")
    config = RunConfig.from_dict(meta["config"])
    data = _dataset(args)
    if data.labels is None:
        raise UsageError("evaluation needs labels")
    if data.input_dim != spec.input_dim:
        raise UsageError(f"dataset rows have {data.input_dim} values but the checkpoint expects {spec.input_dim}")
    train_idx, test_idx = split_indices(data.n, config.eval.train_fraction, config.seed)
    state = TrainState(spec, params, OptimizerState(lr=config.lr_at(1)))
    result = evaluate(state, config, data.subset(train_idx), data.subset(test_idx), probe=not args.no_probe)
    result.update({"checkpoint": str(args.checkpoint), "seed": config.seed, "config": config.to_dict()})
    _emit(result, args.out)
    return EXIT_OK


def _summary_row(label: str, report: dict) -> dict:
    config = report["config"]
    rounds = report.get("rounds") or []
    metrics = report.get("metrics") or []
    return {
        "run": label,
        "name": config.get("name"),
        "seed": report.get("seed"),
        "mode": "control" if config.get("control_mode") else ("progressive" if config.get("recluster") else "single-round"),
        "epochs": f"{config.get('initial_epochs')}+{config.get('total_epochs', 0) - config.get('initial_epochs', 0)}",
        "rounds": len(rounds),
        "max_alpha": max((m.get("alpha") or 0.0 for m in metrics), default=0.0),
        "first_purity": rounds[0]["purity"] if rounds else None,
        "final_purity": rounds[-1]["purity"] if rounds else None,
        "knn_accuracy": report.get("knn_accuracy"),
        "linear_probe_accuracy": report.get("linear_probe_accuracy"),
        "status": report.get("status"),
    }


def _fmt(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def render_table(rows: list[dict]) -> str:
    cols = list(rows[0])
    cells = [[_fmt(r[c]) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines) + "\n"


def plot_rows(label: str, report: dict) -> list[dict]:
    metrics = report.get("metrics") or []
    rows = []
    for i, m in enumerate(metrics):
        row = {k: m.get(k) for k in PLOT_FIELDS if k in m}
        row["run"] = label
        # accuracy is measured once, after the last epoch
        row["knn_accuracy"] = report.get("knn_accuracy") if i == len(metrics) - 1 else None
        rows.append(row)
    return rows


def cmd_report(args) -> int:
    labels = []
    reports = []
    for path in args.runs:
        reports.append(load_report(path))
        labels.append(Path(path).name if Path(path).is_dir() else Path(path).parent.name or str(path))
    # keep labels unique so every run stays distinguishable
    seen: dict[str, int] = {}
    for i, label in enumerate(labels):
        if label in seen:
            seen[label] += 1
            labels[i] = f"{label}#{seen[label]}"
        else:
            seen[label] = 0
    rows = [_summary_row(label, r) for label, r in zip(labels, reports)]
    sys.stdout.write(render_table(rows))
    if args.plot_csv:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=PLOT_FIELDS, lineterminator="\n")
        writer.writeheader()
        for label, r in zip(labels, reports):
            for row in plot_rows(label, r):
                writer.writerow({k: "" if row.get(k) is None else row.get(k) for k in PLOT_FIELDS})
        Path(args.plot_csv).write_text(buf.getvalue())
    if args.json:
        Path(args.json).write_text(json.dumps(_clean(rows), sort_keys=True, indent=2) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pidssl", description="Progressive self-supervision and PID diagnostics.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("decompose", help="PID of a joint pmf CSV (s1,s2,t,p)")
    p.add_argument("pmf")
    p.add_argument("--out")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("synth", help="write a Gaussian-blob dataset as CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--blobs", type=int, default=10)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--per-blob", type=int, default=200)
    p.add_argument("--separation", type=float, default=4.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="run the full pipeline and write report, metrics and checkpoint")
    p.add_argument("--config")
    p.add_argument("--profile", choices=sorted(PROFILES))
    p.add_argument("--data", help="CSV or IDX dataset (default: built-in 10-blob synthetic set)")
    p.add_argument("--labels", help="IDX label file for image datasets")
    p.add_argument("--seed", type=int)
    p.add_argument("--name")
    p.add_argument("--control", action="store_true", help="force alpha to zero (pure SSL control)")
    p.add_argument("--no-probe", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a labelled dataset")
    p.add_argument("checkpoint")
    p.add_argument("--data")
    p.add_argument("--labels")
    p.add_argument("--no-probe", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="compare runs; optionally write per-epoch plot data")
    p.add_argument("runs", nargs="+", help="run directories or report.json files")
    p.add_argument("--plot-csv")
    p.add_argument("--json")
    p.set_defaults(func=cmd_report)
    return parser


def _fail(code: int, kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    except (ConfigError, DatasetError, PMFValidationError, CheckpointError) as exc:
        return _fail(EXIT_USAGE, type(exc).__name__, str(exc))
    except OSError as exc:
        return _fail(EXIT_USAGE, "io", f"{exc.filename or ''}: {exc.strerror or exc}".strip(": "))
    except RunFailed as exc:
        return _fail(EXIT_RUNTIME, "training_aborted", str(exc))
    except (ValueError, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        return _fail(EXIT_RUNTIME, type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
