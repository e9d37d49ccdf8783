import csv
import json

import pytest

from pidssl.cli import main
from pidssl.config import AlphaSchedule, desk_config, save_config
from pidssl.models import NetworkSpec


@pytest.fixture
def small_run(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "d.csv"), "--blobs", "3", "--dim", "6", "--per-blob", "30"]) == 0
    config = desk_config(
        initial_epochs=2, total_epochs=6, recluster_interval=2, n_clusters=3, batch_size=16,
        alpha_schedule=AlphaSchedule(((4, 6, 0.1),)),
        network=NetworkSpec(encoder_widths=(6, 12, 8), projector_widths=(8, 8, 4)),
    )
    save_config(config, tmp_path / "c.toml")
    return tmp_path


def last_error(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    return json.loads(err[0])


def test_decompose_xor(tmp_path, capsys):
    path = tmp_path / "xor.csv"
    path.write_text("s1,s2,t,p\n0,0,0,0.25\n0,1,1,0.25\n1,0,1,0.25\n1,1,0,0.25\n")
    assert main(["decompose", str(path)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["synergy"] == pytest.approx(1.0, abs=1e-12)
    assert out["redundancy"] == pytest.approx(0.0, abs=1e-12)


def test_unknown_flag_is_usage_error(capsys):
    assert main(["decompose", "x.csv", "--bogus"]) == 2
    assert last_error(capsys)["error"] == "usage"


def test_unreadable_file_is_usage_error(tmp_path, capsys):
    assert main(["decompose", str(tmp_path / "missing.csv")]) == 2
    last_error(capsys)


def test_malformed_config_is_usage_error(tmp_path, capsys):
    (tmp_path / "bad.toml").write_text("unknown_key = 3\n")
    assert main(["train", "--config", str(tmp_path / "bad.toml"), "--out", str(tmp_path / "r")]) == 2
    assert "unknown_key" in last_error(capsys)["message"]


def test_runtime_failure_exit_code(small_run, capsys):
    # 90 samples split 72/18: the training split is smaller than one batch of 100
    config = small_run / "c.toml"
    config.write_text(config.read_text().replace("batch_size = 16", "batch_size = 100"))
    code = main(["train", "--config", str(config), "--data", str(small_run / "d.csv"), "--out", str(small_run / "r")])
    assert code == 3
    last_error(capsys)


def test_train_is_byte_deterministic(small_run):
    for out in ("a", "b"):
        assert main(["train", "--config", str(small_run / "c.toml"), "--data", str(small_run / "d.csv"),
                     "--out", str(small_run / out), "--no-probe"]) == 0
    for name in ("metrics.jsonl", "checkpoint.pssl", "report.json"):
        assert (small_run / "a" / name).read_bytes() == (small_run / "b" / name).read_bytes()
    lines = (small_run / "a" / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 6 and json.loads(lines[0])["seed"] == 0


def test_eval_and_report(small_run, capsys):
    common = ["--config", str(small_run / "c.toml"), "--data", str(small_run / "d.csv"), "--no-probe"]
    assert main(["train", *common, "--out", str(small_run / "prog")]) == 0
    assert main(["train", *common, "--control", "--out", str(small_run / "ctrl")]) == 0
    capsys.readouterr()

    assert main(["eval", str(small_run / "prog" / "checkpoint.pssl"), "--data", str(small_run / "d.csv"),
                 "--no-probe", "--out", str(small_run / "eval.json")]) == 0
    evaluated = json.loads((small_run / "eval.json").read_text())
    trained = json.loads((small_run / "prog" / "report.json").read_text())
    assert evaluated["knn_accuracy"] == trained["knn_accuracy"]

    assert main(["report", str(small_run / "prog"), str(small_run / "ctrl"), "--plot-csv", str(small_run / "plot.csv")]) == 0
    table = capsys.readouterr().out.splitlines()
    assert len(table) == 4
    assert table[2].startswith("prog") and "progressive" in table[2]
    assert table[3].startswith("ctrl") and "control" in table[3]
    with open(small_run / "plot.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 12 and {"loss_total", "alpha", "purity", "knn_accuracy"} <= set(rows[0])
    assert rows[5]["knn_accuracy"] != "" and rows[0]["knn_accuracy"] == ""


def test_eval_without_labels(small_run, capsys):
    assert main(["train", "--config", str(small_run / "c.toml"), "--data", str(small_run / "d.csv"),
                 "--no-probe", "--out", str(small_run / "r")]) == 0
    unlabeled = small_run / "u.csv"
    lines = (small_run / "d.csv").read_text().splitlines()
    unlabeled.write_text("\n".join(",".join(line.split(",")[:-1]) for line in lines) + "\n")
    assert main(["eval", str(small_run / "r" / "checkpoint.pssl"), "--data", str(unlabeled)]) == 2
