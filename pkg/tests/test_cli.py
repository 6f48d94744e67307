import json
from pathlib import Path

import numpy as np
import pytest

from modbias.cli import main
from modbias.data import load_dataset, load_split
from modbias.modality import COMBO_T, COMBO_TVA, COMBO_V


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A small planted corpus plus split, shared across CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    assert main([
        "synth", "--out", str(root / "data"), "--name", "demo",
        "--labels", "5", "--per-label", "40", "--audio-dim", "5", "--video-dim", "5",
        "--noise", "0.05", "--plant", "T:0.7,V:0.1,A:0.05,T+V+A:0.15", "--seed", "11",
    ]) == 0
    assert main([
        "split", "--data", str(root / "data" / "demo"),
        "--ratios", "0.6,0.2,0.2", "--seed", "3", "--out", str(root / "split.tsv"),
    ]) == 0
    return root


TRAIN_OPTS = ["--lr", "0.5", "--epochs", "300", "--patience", "30"]


def test_synth_and_split_artifacts(workspace):
    ds = load_dataset(workspace / "data" / "demo")
    assert len(ds) == 200
    spec = load_split(workspace / "split.tsv")
    assert len(spec.assignment) == 200
    assert (workspace / "data" / "demo.plant.tsv").exists()


def test_unknown_flag_exits_1(workspace, capsys):
    with pytest.raises(SystemExit) as e:
        main(["split", "--data", "x", "--bogus"])
    assert e.value.code == 1
    assert "usage" in capsys.readouterr().err


def test_missing_data_exits_2(workspace, tmp_path):
    code = main(["split", "--data", str(tmp_path / "nope"), "--seed", "1",
                 "--out", str(tmp_path / "s.tsv")])
    assert code == 2


def test_kshot_command(workspace, tmp_path):
    out = tmp_path / "few"
    assert main([
        "kshot", "--data", str(workspace / "data" / "demo"),
        "--split", str(workspace / "split.tsv"), "--k", "3", "--seed", "1",
        "--out", str(out),
    ]) == 0
    sub = load_dataset(out)
    assert len(sub) == 15  # 5 labels x 3


def test_train_eval_report_chain(workspace, tmp_path):
    model = tmp_path / "m.json"
    assert main([
        "train", "--data", str(workspace / "data" / "demo"),
        "--split", str(workspace / "split.tsv"), "--combo", "T",
        *TRAIN_OPTS, "--out", str(model),
    ]) == 0
    assert model.exists() and (tmp_path / "m.vocab.json").exists()
    saved = json.loads(model.read_text(encoding="utf-8"))
    assert saved["combo"] == "T"

    metrics1 = tmp_path / "m1.json"
    assert main([
        "eval", "--model", str(model), "--data", str(workspace / "data" / "demo"),
        "--split", str(workspace / "split.tsv"), "--part", "test",
        "--out", str(metrics1),
    ]) == 0
    obj = json.loads(metrics1.read_text(encoding="utf-8"))
    assert 0.0 <= obj["accuracy"] <= 1.0

    report = tmp_path / "r.md"
    assert main([
        "report", "--before", str(metrics1), "--after", str(metrics1),
        "--format", "md", "--out", str(report),
    ]) == 0
    assert report.read_text(encoding="utf-8").startswith("| label |")


def test_ablate_annotate_route_chain(workspace, tmp_path):
    records = tmp_path / "rec.tsv"
    assert main([
        "ablate", "--data", str(workspace / "data" / "demo"),
        "--split", str(workspace / "split.tsv"), "--all-samples", "--fold-seed", "4",
        *TRAIN_OPTS, "--out", str(records),
    ]) == 0
    annotations = tmp_path / "ann.tsv"
    stats = tmp_path / "stats.tsv"
    assert main([
        "annotate", "--data", str(workspace / "data" / "demo"),
        "--records", str(records), "--out", str(annotations), "--stats", str(stats),
    ]) == 0
    stat_lines = stats.read_text(encoding="utf-8").splitlines()
    assert stat_lines[0] == "combo\tpercent"
    assert stat_lines[-3].startswith("sigma_T\t")

    route_dir = tmp_path / "routed"
    assert main([
        "route", "--data", str(workspace / "data" / "demo"),
        "--split", str(workspace / "split.tsv"),
        "--annotations", str(annotations), "--out", str(route_dir),
    ]) == 0
    lines = (route_dir / "routes.tsv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "id\tclass\ts_T\ts_TV\ts_TA\ts_TVA\ts_V"
    assert len(lines) == 201


def test_debias_and_control_chain(workspace, tmp_path):
    out = tmp_path / "deb"
    assert main([
        "debias", "--data", str(workspace / "data" / "demo"),
        "--split", str(workspace / "split.tsv"), "--seed", "5",
        "--min-per-label", "4", *TRAIN_OPTS, "--out", str(out),
    ]) == 0
    votes = (out / "votes.tsv").read_text(encoding="utf-8").splitlines()
    assert len(votes) == 201
    debiased = load_dataset(out / "demo-debiased")
    assert 0 < len(debiased) < 200

    control = tmp_path / "ctrl"
    assert main([
        "control", "--data", str(workspace / "data" / "demo"),
        "--split", str(workspace / "split.tsv"),
        "--debiased", str(out / "demo-debiased"), "--seed", "9",
        "--out", str(control),
    ]) == 0
    assert len(load_dataset(control)) == len(debiased)


def test_pipeline_runs_and_is_deterministic(workspace, tmp_path):
    config = {
        "dataset": str(workspace / "data" / "demo"),
        "out": str(tmp_path / "pipe"),
        "seed": 13,
        "ratios": [0.7, 0.15, 0.15],
        "min_per_label": 4,
        "train": {"learning_rate": 0.5, "max_epochs": 300, "patience": 30},
    }
    cfg_path = tmp_path / "pipe.json"
    cfg_path.write_text(json.dumps(config), encoding="utf-8")
    assert main(["pipeline", "--config", str(cfg_path)]) == 0
    manifest = (tmp_path / "pipe" / "manifest.tsv").read_text(encoding="utf-8")
    assert len(manifest.splitlines()) >= 10
    for line in manifest.splitlines():
        name, digest = line.split("\t")
        assert len(digest) == 64
        assert (tmp_path / "pipe" / name).exists()

    assert main(["pipeline", "--config", str(cfg_path)]) == 0
    again = (tmp_path / "pipe" / "manifest.tsv").read_text(encoding="utf-8")
    assert again == manifest


def test_pipeline_missing_dataset_exits_2(tmp_path):
    cfg_path = tmp_path / "bad.json"
    cfg_path.write_text(
        json.dumps({"dataset": str(tmp_path / "missing"), "out": str(tmp_path / "o"), "seed": 1}),
        encoding="utf-8",
    )
    assert main(["pipeline", "--config", str(cfg_path)]) == 2


def test_pipeline_requires_seed(tmp_path):
    cfg_path = tmp_path / "noseed.json"
    cfg_path.write_text(
        json.dumps({"dataset": "x", "out": str(tmp_path / "o")}), encoding="utf-8"
    )
    assert main(["pipeline", "--config", str(cfg_path)]) == 2
