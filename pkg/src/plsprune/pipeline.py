"""Iterative and single-shot pruning loops, plus the comparison harnesses."""

import csv
import dataclasses
import enum
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import criteria as crit
from .data import subsample
from .errors import ParameterError, PipelineError, PlsPruneError
from .network import TrainConfig, evaluate, flops_count, train_sgd
from .pls import nipals_fit, one_hot, vip
from .representation import PoolingMode, build_feature_matrix
from .surgery import prune_network, select_filters, validate_consistency


class Mode(str, enum.Enum):
    ITERATIVE = "iterative"
    SINGLE = "single"


@dataclass
class PruneConfig:
    ratio: float = 0.10
    iterations: int = 5
    components: int = 2
    pooling: PoolingMode = PoolingMode.GLOBAL_MAX
    pls_sample_fraction: float = 0.10
    stratified: bool = False
    criterion: crit.Criterion = crit.Criterion.PLS_VIP
    fine_tune: TrainConfig = field(default_factory=lambda: TrainConfig(
        learning_rate=0.01, momentum=0.9, batch_size=32, epochs=2))
    seed: int = 0
    mode: Mode = Mode.ITERATIVE
    pls_tol: float = 1e-6
    pls_max_iter: int = 500
    # when set, each iteration dumps its feature matrix, scores and plan here
    artifact_dir: str = None

    def __post_init__(self):
        self.pooling = PoolingMode(self.pooling)
        self.criterion = crit.Criterion(self.criterion)
        self.mode = Mode(self.mode)
        if isinstance(self.fine_tune, dict):
            self.fine_tune = TrainConfig(**self.fine_tune)
        if not 0 < self.ratio < 1:
            raise ParameterError(f"ratio must lie in (0, 1), got {self.ratio}")
        if self.iterations < 0:
            raise ParameterError("iterations must be >= 0")
        if self.components < 1:
            raise ParameterError("components must be >= 1")
        if not 0 < self.pls_sample_fraction <= 1:
            raise ParameterError("pls_sample_fraction must lie in (0, 1]")

    def to_dict(self):
        d = dataclasses.asdict(self)
        for k in ("pooling", "criterion", "mode"):
            d[k] = getattr(self, k).value
        return d


def _seed(*parts):
    """Derive an independent integer seed from the config seed and a stage tag."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


_STAGE_SUBSAMPLE, _STAGE_PLS, _STAGE_FINETUNE = 1, 2, 3


def score_filters(net, train, cfg, iteration=0):
    """Importance score per filter under ``cfg.criterion``.

    Returns ``(scores, info)``; ``info`` carries PLS diagnostics when the
    PLS criterion is used.
    """
    info = {}
    if cfg.criterion is crit.Criterion.L1_NORM:
        return crit.l1_norm_scores(net), info
    sample = subsample(train, cfg.pls_sample_fraction,
                       seed=_seed(cfg.seed, iteration, _STAGE_SUBSAMPLE),
                       stratified=cfg.stratified)
    if cfg.criterion is crit.Criterion.APOZ:
        return crit.apoz_scores(net, sample), info
    X, index = build_feature_matrix(net, sample, cfg.pooling)
    Y = one_hot(sample.labels, train.class_count)
    model = nipals_fit(X, Y, cfg.components, tol=cfg.pls_tol, max_iter=cfg.pls_max_iter,
                       seed=_seed(cfg.seed, iteration, _STAGE_PLS))
    if cfg.artifact_dir:
        _dump_features(cfg.artifact_dir, iteration, X, index)
    info["pls_samples"] = X.shape[0]
    info["pls_features"] = X.shape[1]
    info["pls_converged"] = [bool(v) for v in model.converged]
    return crit.pls_vip_scores(vip(model), index), info


def _dump_features(directory, iteration, X, index):
    path = Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    doc = {"iteration": iteration + 1, "shape": list(X.shape),
           "index": index.to_dict(), "X": X.tolist()}
    (path / f"features_{iteration + 1}.json").write_text(json.dumps(doc))


@dataclass
class PruningReport:
    mode: str
    config: dict
    baseline: dict
    records: list = field(default_factory=list)
    aborted: bool = False
    error: str = None
    timings: list = field(default_factory=list)

    def to_dict(self, include_timings=False):
        d = {"mode": self.mode, "config": self.config, "baseline": self.baseline,
             "records": self.records, "aborted": self.aborted, "error": self.error}
        if include_timings:
            d["timings"] = self.timings
        return d

    def to_json(self, include_timings=False):
        return json.dumps(self.to_dict(include_timings), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        fields = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in fields})

    def write(self, out_dir):
        """Write report.json, iterations.csv, layers.csv and timings.json."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json() + "\n")
        (out / "timings.json").write_text(json.dumps(self.timings, indent=2) + "\n")
        write_iterations_csv(self, out / "iterations.csv")
        write_layers_csv(self, out / "layers.csv")


ITERATION_COLUMNS = ["iteration", "ratio", "filters_removed", "cumulative_removed_pct",
                     "accuracy_before", "accuracy_after_prune", "accuracy_after_finetune",
                     "flops_total", "flops_reduction_pct", "params"]


def write_iterations_csv(report, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(ITERATION_COLUMNS)
        for r in report.records:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in ITERATION_COLUMNS])


def write_layers_csv(report, path):
    """Per-iteration, per-layer removal percentages relative to the unpruned net."""
    original = report.baseline["filters_per_layer"]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "layer_index", "original_filters", "remaining_filters",
                    "removed_pct", "flops"])
        for r in report.records:
            for layer, n0 in enumerate(original):
                left = r["filters_per_layer"][layer]
                w.writerow([r["iteration"], layer, n0, left, repr(100.0 * (n0 - left) / n0),
                            r["conv_flops"][layer]])


def _baseline(net, heldout):
    fl = flops_count(net)
    return {"accuracy": evaluate(net, heldout), "flops_total": fl.total,
            "conv_flops": fl.conv_flops(), "layer_flops": [f for _, _, f in fl.per_layer],
            "params": net.param_count(),
            "filters_per_layer": net.filter_counts(), "fingerprint": net.fingerprint()}


def prune_step(net, train, heldout, cfg, ratio, iteration, baseline):
    """One scoring/selection/surgery/fine-tune pass. Returns (network, record, timings)."""
    timings = {}
    t0 = time.perf_counter()
    accuracy_before = evaluate(net, heldout)
    scores, info = score_filters(net, train, cfg, iteration)
    timings["score_s"] = time.perf_counter() - t0

    plan = select_filters(scores, ratio)
    if cfg.artifact_dir:
        d = Path(cfg.artifact_dir)
        d.mkdir(parents=True, exist_ok=True)
        crit.write_scores_csv(scores, d / f"scores_{iteration + 1}.csv")
        (d / f"plan_{iteration + 1}.json").write_text(json.dumps(plan.to_dict(), indent=2))
    pruned = prune_network(net, plan)
    problems = validate_consistency(pruned)
    if problems:
        raise PipelineError("; ".join(problems))
    accuracy_after_prune = evaluate(pruned, heldout)

    t1 = time.perf_counter()
    tune = dataclasses.replace(cfg.fine_tune, seed=_seed(cfg.seed, iteration, _STAGE_FINETUNE))
    log = train_sgd(pruned, train, tune)
    timings["finetune_s"] = time.perf_counter() - t1

    fl = flops_count(pruned)
    n0 = sum(baseline["filters_per_layer"])
    left = pruned.filter_counts()
    record = {
        "iteration": iteration + 1,
        "ratio": float(ratio),
        "criterion": cfg.criterion.value,
        "filters_removed": len(plan),
        "filters_requested": plan.requested,
        "per_layer_removed": {str(k): v for k, v in plan.per_layer_counts.items()},
        "filters_per_layer": left,
        "cumulative_removed_pct": 100.0 * (n0 - sum(left)) / n0,
        "accuracy_before": accuracy_before,
        "accuracy_after_prune": accuracy_after_prune,
        "accuracy_after_finetune": evaluate(pruned, heldout),
        "finetune_loss": log.loss,
        "flops_total": fl.total,
        "conv_flops": fl.conv_flops(),
        "layer_flops": [f for _, _, f in fl.per_layer],
        "flops_reduction_pct": 100.0 * (baseline["flops_total"] - fl.total) / baseline["flops_total"],
        "params": pruned.param_count(),
        "plan": plan.to_dict(),
        **info,
    }
    timings["total_s"] = time.perf_counter() - t0
    return pruned, record, timings


def _run(net, train, heldout, cfg, ratios, mode):
    report = PruningReport(mode=mode.value, config=cfg.to_dict(), baseline=_baseline(net, heldout))
    for it, ratio in enumerate(ratios):
        try:
            net, record, timings = prune_step(net, train, heldout, cfg, ratio, it,
                                              report.baseline)
        except PlsPruneError as e:
            report.aborted = True
            report.error = f"iteration {it + 1}: {e}"
            raise PipelineError(report.error, report) from e
        report.records.append(record)
        report.timings.append({"iteration": it + 1, **timings})
    return net, report


def run_iterative(net, train, heldout, cfg):
    """Prune ``cfg.ratio`` of the remaining filters per iteration, fine-tuning each time.

    Each iteration starts from the previous iteration's pruned network and
    re-fits the scorer on it. Accuracy is always measured on ``heldout``.
    """
    return _run(net, train, heldout, cfg, [cfg.ratio] * cfg.iterations, Mode.ITERATIVE)


def run_single_shot(net, train, heldout, ratio, cfg):
    """One scoring pass at ``ratio`` followed by one fine-tuning stage."""
    if not 0 < ratio < 1:
        raise ParameterError(f"ratio must lie in (0, 1), got {ratio}")
    return _run(net, train, heldout, cfg, [ratio], Mode.SINGLE)


def run(net, train, heldout, cfg):
    if cfg.mode is Mode.SINGLE:
        return run_single_shot(net, train, heldout, cfg.ratio, cfg)
    return run_iterative(net, train, heldout, cfg)


def compare_iterative_single(net, train, heldout, cfg, iterative_report=None, at=None):
    """Pair iterative accuracy with a single-shot run removing the same share.

    For each iterative iteration ``i`` in ``at`` (default: all), a single
    pass from the original network uses ratio = filters removed so far / total.
    Accuracy drops are in percentage points against the unpruned network.
    """
    if iterative_report is None:
        _, iterative_report = run_iterative(net, train, heldout, cfg)
    base = iterative_report.baseline
    n0 = sum(base["filters_per_layer"])
    rows = []
    for r in iterative_report.records:
        if at is not None and r["iteration"] not in at:
            continue
        removed = n0 - sum(r["filters_per_layer"])
        _, single = run_single_shot(net, train, heldout, removed / n0, cfg)
        s = single.records[0]
        rows.append({
            "iteration": r["iteration"],
            "removed_pct": 100.0 * removed / n0,
            "iterative_accuracy": r["accuracy_after_finetune"],
            "single_accuracy": s["accuracy_after_finetune"],
            "iterative_drop_pp": 100.0 * (base["accuracy"] - r["accuracy_after_finetune"]),
            "single_drop_pp": 100.0 * (base["accuracy"] - s["accuracy_after_finetune"]),
            "single_filters_removed": s["filters_removed"],
        })
    return rows


def compare_criteria(net, train, heldout, cfg, criteria=tuple(crit.Criterion)):
    """One pruning iteration per criterion from the same starting weights."""
    fingerprint = net.fingerprint()
    rows = []
    for c in criteria:
        c_cfg = dataclasses.replace(cfg, criterion=c)
        start = net.copy()
        _, report = run_single_shot(start, train, heldout, cfg.ratio, c_cfg)
        r = report.records[0]
        rows.append({
            "criterion": crit.Criterion(c).value,
            "start_fingerprint": report.baseline["fingerprint"],
            "filters_removed": r["filters_removed"],
            "accuracy_before": report.baseline["accuracy"],
            "accuracy_after_finetune": r["accuracy_after_finetune"],
            "accuracy_drop_pp": 100.0 * (report.baseline["accuracy"] - r["accuracy_after_finetune"]),
            "flops_reduction_pct": r["flops_reduction_pct"],
            "params": r["params"],
        })
        if net.fingerprint() != fingerprint:
            raise PipelineError(f"criterion {c.value} modified the starting network")
    return rows
