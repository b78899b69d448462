"""Command line entry point: ``plsprune {train,prune,compare,report}``.

Configuration precedence is defaults < ``--config`` JSON file < flags.
Every random stream is derived from the single ``seed`` value.
"""

import argparse
import copy
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import network as nn
from .errors import ParseError, PipelineError, PlsPruneError
from .pipeline import (
    PruneConfig,
    PruningReport,
    compare_criteria,
    run,
    write_iterations_csv,
    write_layers_csv,
)

DEFAULTS = {
    "seed": 0,
    "out": "runs/default",
    "checkpoint": None,
    "dataset": {
        "kind": "synthetic",
        "n": 6000,
        "classes": 3,
        "image_shape": [1, 16, 16],
        "noise": 0.35,
        "images": None,
        "labels": None,
        "csv": None,
        "pixel_range": 255.0,
        "train_fraction": 5 / 6,
    },
    "model": {"conv_filters": [8, 16, 16], "kernel": 3, "pool_after": [0, 1], "head": "flatten"},
    "train": {"learning_rate": 0.02, "momentum": 0.9, "batch_size": 32, "epochs": 8},
    "prune": {
        "ratio": 0.10,
        "iterations": 5,
        "components": 2,
        "pooling": "gmax",
        "pls_sample_fraction": 0.10,
        "stratified": False,
        "criterion": "pls",
        "mode": "iterative",
        "fine_tune": {"learning_rate": 0.01, "momentum": 0.9, "batch_size": 32, "epochs": 2},
    },
}

# flag dest -> path in the config tree
FLAG_KEYS = {
    "seed": ("seed",),
    "out": ("out",),
    "checkpoint": ("checkpoint",),
    "dataset": ("dataset", "kind"),
    "images": ("dataset", "images"),
    "labels": ("dataset", "labels"),
    "csv": ("dataset", "csv"),
    "image_shape": ("dataset", "image_shape"),
    "n": ("dataset", "n"),
    "classes": ("dataset", "classes"),
    "train_fraction": ("dataset", "train_fraction"),
    "epochs": ("train", "epochs"),
    "lr": ("train", "learning_rate"),
    "batch_size": ("train", "batch_size"),
    "ratio": ("prune", "ratio"),
    "iterations": ("prune", "iterations"),
    "components": ("prune", "components"),
    "pooling": ("prune", "pooling"),
    "criterion": ("prune", "criterion"),
    "pls_sample_fraction": ("prune", "pls_sample_fraction"),
    "mode": ("prune", "mode"),
    "finetune_epochs": ("prune", "fine_tune", "epochs"),
    "finetune_lr": ("prune", "fine_tune", "learning_rate"),
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def resolve_config(args):
    cfg = copy.deepcopy(DEFAULTS)
    if getattr(args, "config", None):
        try:
            cfg = _merge(cfg, json.loads(Path(args.config).read_text()))
        except FileNotFoundError:
            raise UsageError(f"config file not found: {args.config}")
        except json.JSONDecodeError as e:
            raise UsageError(f"config file {args.config}: {e}")
    for dest, path in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        node = cfg
        for key in path[:-1]:
            node = node[key]
        node[path[-1]] = value
    return cfg


class UsageError(Exception):
    pass


def _derive(seed, tag):
    return int(np.random.SeedSequence([int(seed), tag]).generate_state(1)[0])


def load_dataset(cfg):
    """Return (train, heldout) per the dataset section, split with the run seed."""
    d = cfg["dataset"]
    kind = d["kind"]
    if kind == "synthetic":
        ds = data_mod.synthetic(int(d["n"]), int(d["classes"]), tuple(d["image_shape"]),
                                seed=_derive(cfg["seed"], 1), noise=float(d["noise"]))
    elif kind == "idx":
        for key in ("images", "labels"):
            if not d.get(key) or not Path(d[key]).is_file():
                raise UsageError(f"idx dataset needs an existing --{key} file (got {d.get(key)!r})")
        ds = data_mod.load_idx(d["images"], d["labels"])
    elif kind == "csv":
        if not d.get("csv") or not Path(d["csv"]).is_file():
            raise UsageError(f"csv dataset needs an existing --csv file (got {d.get('csv')!r})")
        ds = data_mod.load_csv(d["csv"], tuple(d["image_shape"]), float(d["pixel_range"]))
    else:
        raise UsageError(f"unknown dataset kind {kind!r}")
    return data_mod.split(ds, float(d["train_fraction"]), seed=_derive(cfg["seed"], 2))


def prune_config(cfg):
    p = dict(cfg["prune"])
    p["fine_tune"] = nn.TrainConfig(**p["fine_tune"])
    return PruneConfig(seed=int(cfg["seed"]), **p)


def _checkpoint(cfg):
    path = Path(cfg["checkpoint"] or Path(cfg["out"]) / "model.json")
    if not path.is_file():
        raise UsageError(f"checkpoint not found: {path}")
    return nn.load(path)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_train(cfg):
    train, heldout = load_dataset(cfg)
    m = cfg["model"]
    net = nn.build_cnn(tuple(train.image_shape), tuple(m["conv_filters"]), train.class_count,
                       kernel=int(m["kernel"]), pool_after=tuple(m["pool_after"]),
                       head=m["head"], seed=_derive(cfg["seed"], 3))
    tcfg = nn.TrainConfig(seed=_derive(cfg["seed"], 4), **cfg["train"])
    history = nn.train_sgd(net, train, tcfg)
    acc = nn.evaluate(net, heldout)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    nn.save(net, out / "model.json")
    _write_json(out / "train_log.json", {"config": cfg, **history.to_dict(),
                                          "heldout_accuracy": acc})
    print(f"held-out accuracy: {acc:.4f}")
    print(f"model written to {out / 'model.json'}")
    return 0


def cmd_prune(cfg):
    net = _checkpoint(cfg)
    train, heldout = load_dataset(cfg)
    pcfg = prune_config(cfg)
    out = Path(cfg["out"])
    try:
        pruned, report = run(net, train, heldout, pcfg)
    except PipelineError as e:
        if e.report is not None:
            e.report.write(out)
            print(f"partial report (aborted) written to {out / 'report.json'}", file=sys.stderr)
        raise
    report.write(out)
    nn.save(pruned, out / "pruned_model.json")
    base = report.baseline
    print(f"baseline accuracy {base['accuracy']:.4f}, FLOPs {base['flops_total']}")
    for r in report.records:
        print(f"iter {r['iteration']}: removed {r['cumulative_removed_pct']:.1f}% filters, "
              f"acc {r['accuracy_after_finetune']:.4f}, "
              f"FLOPs -{r['flops_reduction_pct']:.2f}%")
    return 0


COMPARE_COLUMNS = ["criterion", "filters_removed", "accuracy_before",
                   "accuracy_after_finetune", "accuracy_drop_pp", "flops_reduction_pct",
                   "params", "start_fingerprint"]


def cmd_compare(cfg):
    net = _checkpoint(cfg)
    train, heldout = load_dataset(cfg)
    rows = compare_criteria(net, train, heldout, prune_config(cfg))
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "compare.csv", "w", newline="") as f:
        w = csv.DictWriter(f, COMPARE_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    _write_json(out / "compare.json", rows)
    print(f"{'criterion':<10}{'removed':>8}{'acc':>9}{'drop(pp)':>10}{'FLOPs-%':>9}")
    for r in rows:
        print(f"{r['criterion']:<10}{r['filters_removed']:>8}{r['accuracy_after_finetune']:>9.4f}"
              f"{r['accuracy_drop_pp']:>10.2f}{r['flops_reduction_pct']:>9.2f}")
    return 0


RECORD_FIELDS = ("iteration", "flops_total", "layer_flops", "filters_per_layer",
                 "accuracy_after_finetune", "flops_reduction_pct", "cumulative_removed_pct")


def load_report(path):
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"malformed report {path}: {e.msg}",
                         offset=len(text[:e.pos].encode())) from e
    try:
        report = PruningReport.from_dict(doc)
        missing = [f for f in ("accuracy", "flops_total", "params", "filters_per_layer")
                   if f not in report.baseline]
        for r in report.records:
            missing += [f"records[{r.get('iteration')}].{f}" for f in RECORD_FIELDS if f not in r]
    except (TypeError, AttributeError) as e:
        raise ParseError(f"malformed report {path}: {e}") from e
    if missing:
        raise ParseError(f"malformed report {path}: missing {', '.join(missing)}")
    return report


def cmd_report(report_path, out_dir=None):
    report = load_report(report_path)
    out = Path(out_dir) if out_dir else Path(report_path).parent
    out.mkdir(parents=True, exist_ok=True)
    base = report.baseline
    original = base["filters_per_layer"]
    print(f"mode: {report.mode}{'  (ABORTED: ' + report.error + ')' if report.aborted else ''}")
    print(f"baseline: accuracy {base['accuracy']:.4f}, FLOPs {base['flops_total']}, "
          f"params {base['params']}")
    print(f"{'iter':>4}{'acc':>9}{'drop(pp)':>10}{'FLOPs':>10}{'FLOPs-%':>9}{'removed-%':>11}")
    for r in report.records:
        if sum(r["layer_flops"]) != r["flops_total"]:
            raise PlsPruneError(f"iteration {r['iteration']}: per-layer FLOPs do not sum to total")
        drop = 100.0 * (base["accuracy"] - r["accuracy_after_finetune"])
        print(f"{r['iteration']:>4}{r['accuracy_after_finetune']:>9.4f}{drop:>10.2f}"
              f"{r['flops_total']:>10}{r['flops_reduction_pct']:>9.2f}"
              f"{r['cumulative_removed_pct']:>11.2f}")
    model_path = Path(report_path).parent / "pruned_model.json"
    if report.records and model_path.is_file():
        actual = nn.flops_count(nn.load(model_path)).total
        if actual != report.records[-1]["flops_total"]:
            raise PlsPruneError(f"final FLOPs {report.records[-1]['flops_total']} disagree "
                                f"with {model_path} ({actual})")
        print(f"final FLOPs match {model_path}")
    if report.records:
        last = report.records[-1]["filters_per_layer"]
        print("removed filters per layer (final):")
        for layer, (n0, left) in enumerate(zip(original, last)):
            print(f"  layer {layer}: {n0 - left}/{n0} ({100.0 * (n0 - left) / n0:.1f}%)")
    write_iterations_csv(report, out / "trajectory.csv")
    write_layers_csv(report, out / "layers.csv")
    print(f"CSV written to {out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="plsprune",
                                     description="PLS+VIP structured pruning of small CNNs")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    g = common.add_argument_group("dataset")
    g.add_argument("--dataset", choices=["synthetic", "idx", "csv"])
    g.add_argument("--images", help="IDX image file")
    g.add_argument("--labels", help="IDX label file")
    g.add_argument("--csv", help="CSV file (label, pixel_0, ...)")
    g.add_argument("--image-shape", type=int, nargs=3, metavar=("C", "H", "W"))
    g.add_argument("--n", type=int, help="synthetic sample count")
    g.add_argument("--classes", type=int, help="synthetic class count")
    g.add_argument("--train-fraction", type=float)

    pr = argparse.ArgumentParser(add_help=False)
    pr.add_argument("--checkpoint", help="model file (default: <out>/model.json)")
    pr.add_argument("--ratio", type=float)
    pr.add_argument("--iterations", type=int)
    pr.add_argument("--components", type=int)
    pr.add_argument("--pooling", choices=["gmax", "gavg", "max2x2"])
    pr.add_argument("--criterion", choices=["pls", "l1", "apoz"])
    pr.add_argument("--pls-sample-fraction", type=float)
    pr.add_argument("--mode", choices=["iterative", "single"])
    pr.add_argument("--finetune-epochs", type=int)
    pr.add_argument("--finetune-lr", type=float)

    t = sub.add_parser("train", parents=[common], help="train a baseline network")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    sub.add_parser("prune", parents=[common, pr], help="run the pruning loop")
    sub.add_parser("compare", parents=[common, pr], help="compare pruning criteria")
    r = sub.add_parser("report", help="summarize a report.json")
    r.add_argument("report", help="path to report.json")
    r.add_argument("--out", help="directory for CSV output (default: next to the report)")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args.report, args.out)
        cfg = resolve_config(args)
        return {"train": cmd_train, "prune": cmd_prune, "compare": cmd_compare}[args.command](cfg)
    except UsageError as e:
        parser.error(str(e))
    except (PlsPruneError, OSError) as e:
        print(f"plsprune: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
