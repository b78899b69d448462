"""Turn every conv filter's feature maps into columns of one feature matrix."""

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, RepresentationError


class PoolingMode(str, enum.Enum):
    GLOBAL_MAX = "gmax"
    GLOBAL_AVG = "gavg"
    MAX_POOL_2X2 = "max2x2"


@dataclass(frozen=True, order=True)
class FilterKey:
    """``layer`` is the conv ordinal (0 = first Conv2D), not the chain position."""

    layer: int
    filter: int

    def __str__(self):
        return f"({self.layer},{self.filter})"


@dataclass(frozen=True)
class FeatureMapIndex:
    """Maps each filter to its half-open column range ``[start, stop)`` in X."""

    entries: tuple  # of (FilterKey, start, stop)

    @property
    def n_features(self):
        return self.entries[-1][2] if self.entries else 0

    def keys(self):
        return [key for key, _, _ in self.entries]

    def columns(self, key):
        for k, start, stop in self.entries:
            if k == key:
                return range(start, stop)
        raise KeyError(key)

    def to_dict(self):
        return [{"layer": k.layer, "filter": k.filter, "start": a, "stop": b}
                for k, a, b in self.entries]


def pool_maps(maps, mode):
    """Pool (n, F, H, W) maps to (n, F * width) in filter-major order."""
    mode = PoolingMode(mode)
    n, f, h, w = maps.shape
    if mode is PoolingMode.GLOBAL_MAX:
        return maps.max(axis=(2, 3))
    if mode is PoolingMode.GLOBAL_AVG:
        return maps.mean(axis=(2, 3))
    h2, w2 = h // 2, w // 2
    pooled = maps[:, :, :2 * h2, :2 * w2].reshape(n, f, h2, 2, w2, 2).max(axis=(3, 5))
    return pooled.reshape(n, f * h2 * w2)


def build_feature_matrix(net, data, mode=PoolingMode.GLOBAL_MAX, batch_size=500):
    """Feature matrix with one row per sample and the filter-to-column index.

    Columns run over conv layers in order, then filters, then (for 2x2 max
    pooling) the pooled grid in row-major order.
    """
    mode = PoolingMode(mode)
    images = data.images if hasattr(data, "images") else np.asarray(data)
    if images.shape[0] == 0:
        raise ParameterError("cannot build features from an empty dataset")
    convs = net.conv_positions()
    if not convs:
        raise RepresentationError("network has no Conv2D layer")
    shapes = net.shapes()
    widths = []
    for ordinal, pos in enumerate(convs):
        f, h, w = shapes[pos]
        if mode is PoolingMode.MAX_POOL_2X2:
            if h < 2 or w < 2:
                raise RepresentationError(
                    f"conv layer {ordinal} (position {pos}) has spatial size {h}x{w}; "
                    "2x2 max pooling needs at least 2x2")
            widths.append((f, (h // 2) * (w // 2)))
        else:
            widths.append((f, 1))

    blocks = []
    for start in range(0, images.shape[0], batch_size):
        _, acts = net.forward_with_activations(images[start:start + batch_size])
        blocks.append(np.concatenate([pool_maps(a, mode) for a in acts], axis=1))
    X = np.concatenate(blocks, axis=0)

    entries, col = [], 0
    for ordinal, (f, width) in enumerate(widths):
        for j in range(f):
            entries.append((FilterKey(ordinal, j), col, col + width))
            col += width
    assert col == X.shape[1]
    return X, FeatureMapIndex(tuple(entries))
