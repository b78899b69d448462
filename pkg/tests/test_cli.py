import csv
import json

import pytest

from plsprune.cli import main
from plsprune.network import flops_count, load

SMALL = {
    "dataset": {"n": 240, "image_shape": [1, 8, 8], "noise": 0.2, "train_fraction": 0.75},
    "model": {"conv_filters": [4, 6], "pool_after": [0]},
    "train": {"epochs": 2, "learning_rate": 0.05},
    "prune": {"iterations": 2, "ratio": 0.2, "pls_sample_fraction": 0.5,
              "fine_tune": {"epochs": 1}},
}


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    out = root / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out), "--seed", "3"]) == 0
    return cfg, out


def run_prune(cfg, checkpoint, out, *extra):
    return main(["prune", "--config", str(cfg), "--checkpoint", str(checkpoint),
                 "--out", str(out), "--seed", "3", *extra])


def test_missing_idx_path_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["train", "--dataset", "idx", "--images", str(tmp_path / "nope"),
              "--out", str(tmp_path)])
    assert e.value.code == 2


def test_missing_checkpoint_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["prune", "--out", str(tmp_path / "empty")])
    assert e.value.code == 2


def test_train_outputs(trained, tmp_path, capsys):
    cfg, out = trained
    assert (out / "model.json").is_file()
    log = json.loads((out / "train_log.json").read_text())
    assert len(log["loss"]) == 2 and 0 <= log["heldout_accuracy"] <= 1
    assert log["config"]["model"]["conv_filters"] == [4, 6]
    capsys.readouterr()
    main(["train", "--config", str(cfg), "--out", str(tmp_path), "--seed", "3"])
    assert "held-out accuracy" in capsys.readouterr().out
    again = json.loads((tmp_path / "train_log.json").read_text())
    assert again["heldout_accuracy"] == log["heldout_accuracy"]
    assert (tmp_path / "model.json").read_text() == (out / "model.json").read_text()


def test_flags_override_config_file(trained, tmp_path):
    cfg, _ = trained
    main(["train", "--config", str(cfg), "--out", str(tmp_path), "--epochs", "1", "--seed", "3"])
    log = json.loads((tmp_path / "train_log.json").read_text())
    assert len(log["loss"]) == 1
    assert log["config"]["dataset"]["n"] == 240  # from the file
    assert log["config"]["train"]["momentum"] == 0.9  # default


def test_prune_iterative_and_report(trained, tmp_path, capsys):
    cfg, out = trained
    assert run_prune(cfg, out / "model.json", tmp_path) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert len(report["records"]) == 2 and report["mode"] == "iterative"
    pruned = load(tmp_path / "pruned_model.json")
    assert flops_count(pruned).total == report["records"][-1]["flops_total"]

    capsys.readouterr()
    assert main(["report", str(tmp_path / "report.json"), "--out", str(tmp_path / "csv")]) == 0
    printed = capsys.readouterr().out
    assert "final FLOPs match" in printed
    layers = list(csv.DictReader(open(tmp_path / "csv" / "layers.csv")))
    assert len(layers) == 2 * 2
    assert all(0 <= float(r["removed_pct"]) <= 100 for r in layers)
    rows = list(csv.DictReader(open(tmp_path / "csv" / "trajectory.csv")))
    for row, rec in zip(rows, report["records"]):
        for key, value in row.items():
            assert type(rec[key])(value) == rec[key], key


def test_prune_single_and_l1(trained, tmp_path):
    cfg, out = trained
    run_prune(cfg, out / "model.json", tmp_path / "s", "--mode", "single", "--ratio", "0.4")
    report = json.loads((tmp_path / "s" / "report.json").read_text())
    assert len(report["records"]) == 1 and report["records"][0]["filters_removed"] == 4

    run_prune(cfg, out / "model.json", tmp_path / "p", "--iterations", "1")
    run_prune(cfg, out / "model.json", tmp_path / "l", "--iterations", "1", "--criterion", "l1")
    p = json.loads((tmp_path / "p" / "report.json").read_text())
    l1 = json.loads((tmp_path / "l" / "report.json").read_text())
    assert l1["records"][0]["criterion"] == "l1" and p["records"][0]["criterion"] == "pls"
    assert p["baseline"] == l1["baseline"]
    assert p["records"][0]["filters_removed"] == l1["records"][0]["filters_removed"]
    assert "pls_samples" not in l1["records"][0]


def test_compare(trained, tmp_path, capsys):
    cfg, out = trained
    capsys.readouterr()
    assert main(["compare", "--config", str(cfg), "--checkpoint", str(out / "model.json"),
                 "--out", str(tmp_path), "--seed", "3"]) == 0
    table = capsys.readouterr().out.splitlines()
    assert [line.split()[0] for line in table[1:]] == ["pls", "l1", "apoz"]
    rows = list(csv.DictReader(open(tmp_path / "compare.csv")))
    assert len(rows) == 3
    assert len({r["filters_removed"] for r in rows}) == 1
    assert len({r["start_fingerprint"] for r in rows}) == 1


def test_malformed_report(tmp_path, capsys):
    bad = tmp_path / "report.json"
    bad.write_text('{"mode": "iterative", "config": {}')
    assert main(["report", str(bad)]) == 1
    assert "byte offset" in capsys.readouterr().err
    bad.write_text(json.dumps({"mode": "iterative", "config": {}, "baseline": {}}))
    assert main(["report", str(bad)]) == 1
    assert "missing" in capsys.readouterr().err
