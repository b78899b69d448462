"""Global filter selection and structural removal of conv filters."""

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ShapeError, SurgeryError
from .network import (
    Conv2D,
    Dense,
    Flatten,
    GlobalAvgPool,
    GlobalMaxPool,
    MaxPool,
    ReLU,
    Softmax,
)
from .representation import FilterKey

# guards against ratio * n landing a hair below an integer, e.g. 0.29 * 100
_FLOOR_EPS = 1e-9


@dataclass(frozen=True)
class RemovalPlan:
    victims: tuple  # sorted FilterKeys
    ratio: float
    requested: int
    per_layer_counts: dict = field(default_factory=dict)
    guarded: tuple = ()  # filters spared so that no layer is emptied

    def __len__(self):
        return len(self.victims)

    def to_dict(self):
        return {
            "ratio": self.ratio,
            "requested": self.requested,
            "victims": [[k.layer, k.filter] for k in self.victims],
            "per_layer_counts": {str(k): v for k, v in sorted(self.per_layer_counts.items())},
            "guarded": [[k.layer, k.filter] for k in self.guarded],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            victims=tuple(FilterKey(a, b) for a, b in d["victims"]),
            ratio=float(d["ratio"]),
            requested=int(d["requested"]),
            per_layer_counts={int(k): int(v) for k, v in d["per_layer_counts"].items()},
            guarded=tuple(FilterKey(a, b) for a, b in d.get("guarded", [])),
        )


def victim_count(ratio, n):
    return int(math.floor(ratio * n + _FLOOR_EPS))


def select_filters(scores, ratio):
    """Pick the ``floor(ratio * n)`` lowest-scoring filters across all layers.

    Ties break by ascending (layer, filter). Walking up the global ranking,
    a filter is skipped when taking it would leave its layer empty, and the
    next one in the ranking is taken instead.
    """
    if not 0 < ratio < 1:
        raise ParameterError(f"pruning ratio must lie in (0, 1), got {ratio}")
    keys = [s.key for s in scores]
    if len(set(keys)) != len(keys):
        raise ParameterError("scores contain more than one entry for some filter")
    sizes = Counter(k.layer for k in keys)
    requested = victim_count(ratio, len(keys))
    ranking = sorted(scores, key=lambda s: (s.score, s.key.layer, s.key.filter))
    remaining = dict(sizes)
    victims, guarded = [], []
    for s in ranking:
        if len(victims) == requested:
            break
        if remaining[s.key.layer] <= 1:
            guarded.append(s.key)
            continue
        remaining[s.key.layer] -= 1
        victims.append(s.key)
    per_layer = Counter(k.layer for k in victims)
    return RemovalPlan(
        victims=tuple(sorted(victims)),
        ratio=float(ratio),
        requested=requested,
        per_layer_counts={layer: per_layer.get(layer, 0) for layer in sorted(sizes)},
        guarded=tuple(guarded),
    )


def _consumer(net, conv_pos):
    """Locate the weighted layer fed by a conv's channels.

    Returns ``(position, block)`` where ``block`` is the number of input
    features each channel occupies in a Dense consumer (None for a conv).
    """
    shapes = net.shapes()
    spatial = None
    for pos in range(conv_pos + 1, len(net.layers)):
        layer = net.layers[pos]
        if spatial is None:
            if isinstance(layer, (ReLU, MaxPool)):
                continue
            if isinstance(layer, Conv2D):
                return pos, None
            if isinstance(layer, (GlobalMaxPool, GlobalAvgPool)):
                spatial = 1
                continue
            if isinstance(layer, Flatten):
                _, h, w = shapes[pos - 1]
                spatial = h * w
                continue
        else:
            if isinstance(layer, (ReLU, Flatten)):
                continue
            if isinstance(layer, Dense):
                return pos, spatial
        raise SurgeryError(
            f"no rewiring rule for {net.layers[pos - 1].kind} -> {layer.kind} "
            f"at position {pos}, downstream of conv at position {conv_pos}")
    raise SurgeryError(f"conv at position {conv_pos} feeds no weighted layer")


def prune_network(net, plan):
    """Return a new network with the plan's filters removed and consumers rewired."""
    positions = net.conv_positions()
    by_layer = {}
    for key in plan.victims:
        if not 0 <= key.layer < len(positions):
            raise SurgeryError(f"filter {key}: no conv layer {key.layer}")
        if not 0 <= key.filter < net.layers[positions[key.layer]].out_channels:
            raise SurgeryError(f"filter {key}: conv layer {key.layer} has no such filter")
        by_layer.setdefault(key.layer, set()).add(key.filter)

    new = net.copy()
    for ordinal, drop in sorted(by_layer.items()):
        pos = positions[ordinal]
        conv = new.layers[pos]
        if len(drop) >= conv.out_channels:
            raise SurgeryError(f"plan would remove every filter of conv layer {ordinal}")
        keep = np.array([j for j in range(conv.out_channels) if j not in drop])
        target, block = _consumer(net, pos)
        conv.weight = conv.weight[keep]
        conv.bias = conv.bias[keep]
        conv.out_channels = keep.size
        consumer = new.layers[target]
        if block is None:
            consumer.weight = consumer.weight[:, keep]
            consumer.in_channels = keep.size
        else:
            rows = (keep[:, None] * block + np.arange(block)).ravel()
            consumer.weight = consumer.weight[rows]
            consumer.in_features = rows.size

    problems = validate_consistency(new)
    if problems:
        raise SurgeryError("pruned network is inconsistent: " + "; ".join(problems))
    return new


def validate_consistency(net):
    """List every shape or weight-size problem; an empty list means ok."""
    problems = []
    if not net.layers:
        return ["network has no layers"]
    s = net.input_shape
    seen_conv = False
    for pos, layer in enumerate(net.layers):
        label = f"layer {pos} ({layer.kind})"
        if isinstance(layer, Conv2D):
            seen_conv = True
            expected = {"weight": (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel),
                        "bias": (layer.out_channels,)}
        elif isinstance(layer, Dense):
            expected = {"weight": (layer.in_features, layer.out_features),
                        "bias": (layer.out_features,)}
        else:
            expected = {}
        for name, shape in expected.items():
            actual = np.shape(getattr(layer, name))
            if tuple(actual) != shape:
                problems.append(f"{label} {name}: expected shape {shape} "
                                f"({math.prod(shape)} values), got {tuple(actual)} "
                                f"({math.prod(actual)} values)")
        if isinstance(layer, (Conv2D, MaxPool, GlobalMaxPool, GlobalAvgPool)) and len(s) != 3:
            problems.append(f"{label}: expects a (C, H, W) input, got {s}")
            return problems
        try:
            s = layer.output_shape(s)
        except ShapeError as e:
            problems.append(f"{label}: {e}")
            return problems
    if not seen_conv:
        problems.append("network has no Conv2D layer")
    if not isinstance(net.layers[-1], Softmax):
        problems.append(f"final layer is {net.layers[-1].kind}, expected softmax")
    return problems
