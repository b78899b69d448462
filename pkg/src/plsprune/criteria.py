"""Per-filter importance scores. Higher always means more important."""

import csv
import enum
from dataclasses import dataclass

import numpy as np

from .errors import CriterionError, IndexMismatchError, ParameterError
from .network import Conv2D, ReLU
from .representation import FilterKey


class Criterion(str, enum.Enum):
    PLS_VIP = "pls"
    L1_NORM = "l1"
    APOZ = "apoz"


@dataclass(frozen=True)
class FilterScore:
    key: FilterKey
    score: float
    criterion: Criterion


def pls_vip_scores(vip_values, index):
    """One score per filter: the mean VIP of the filter's feature columns."""
    vip_values = np.asarray(vip_values, dtype=np.float64)
    if vip_values.shape != (index.n_features,):
        raise IndexMismatchError(
            f"{vip_values.size} VIP values for an index of {index.n_features} features")
    return [FilterScore(key, float(vip_values[a:b].mean()), Criterion.PLS_VIP)
            for key, a, b in index.entries]


def l1_norm_scores(net):
    """Sum of absolute kernel weights per filter (bias excluded)."""
    scores = []
    for ordinal, conv in enumerate(net.conv_layers()):
        norms = np.abs(conv.weight).sum(axis=(1, 2, 3))
        scores += [FilterScore(FilterKey(ordinal, j), float(v), Criterion.L1_NORM)
                   for j, v in enumerate(norms)]
    return scores


def apoz_scores(net, data, batch_size=500):
    """``1 - APoZ``: fraction of nonzero post-ReLU activations per filter."""
    positions = net.conv_positions()
    for ordinal, pos in enumerate(positions):
        nxt = net.layers[pos + 1] if pos + 1 < len(net.layers) else None
        if not isinstance(nxt, ReLU):
            raise CriterionError(
                f"APoZ needs a ReLU after every conv; conv layer {ordinal} "
                f"(position {pos}) is followed by {getattr(nxt, 'kind', 'nothing')}")
    images = data.images
    if images.shape[0] == 0:
        raise ParameterError("cannot compute APoZ on an empty dataset")
    zeros = [np.zeros(c.out_channels) for c in net.conv_layers()]
    totals = [0] * len(zeros)
    for start in range(0, images.shape[0], batch_size):
        _, acts = net.forward_with_activations(images[start:start + batch_size])
        for i, a in enumerate(acts):
            zeros[i] += (a == 0).sum(axis=(0, 2, 3))
            totals[i] += a.shape[0] * a.shape[2] * a.shape[3]
    scores = []
    for ordinal, (z, total) in enumerate(zip(zeros, totals)):
        scores += [FilterScore(FilterKey(ordinal, j), float(1.0 - v / total), Criterion.APOZ)
                   for j, v in enumerate(z)]
    return scores


def write_scores_csv(scores, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["layer_index", "filter_index", "criterion", "score"])
        for s in scores:
            w.writerow([s.key.layer, s.key.filter, Criterion(s.criterion).value, repr(s.score)])
