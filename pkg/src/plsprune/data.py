"""Datasets: IDX/CSV loaders, a synthetic pattern generator, splits, subsampling."""

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyError, FormatError, ParameterError, ParseError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """Images (n, C, H, W) in [0, 1] with integer labels in [0, class_count)."""

    images: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 4:
            raise ConsistencyError(f"images must be (n, C, H, W), got shape {images.shape}")
        if labels.shape != (images.shape[0],):
            raise ConsistencyError(
                f"{images.shape[0]} images but labels have shape {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise ConsistencyError(f"labels must lie in [0, {self.class_count})")
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise ConsistencyError("pixel values must lie in [0, 1]")
        images.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.labels.shape[0]

    @property
    def image_shape(self):
        return self.images.shape[1:]

    def take(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx], self.class_count)


# -- IDX ----------------------------------------------------------------------

def _read_idx(path, magic, ndim):
    with open(path, "rb") as f:
        raw = f.read()
    header = 4 + 4 * ndim
    if len(raw) < 4:
        raise ParseError(f"{path}: truncated magic number", offset=len(raw))
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise FormatError(f"{path}: magic 0x{got:08x}, expected 0x{magic:08x}", offset=0)
    if len(raw) < header:
        raise ParseError(f"{path}: truncated header", offset=len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    need = int(np.prod(dims))
    if len(raw) - header < need:
        raise ParseError(
            f"{path}: expected {need} data bytes, found {len(raw) - header}",
            offset=len(raw))
    data = np.frombuffer(raw, dtype=np.uint8, count=need, offset=header)
    return data.reshape(dims)


def load_idx(images_path, labels_path, class_count=None):
    """Read an IDX image file (3-D ubyte) and its label file (1-D ubyte)."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1).astype(np.int64)
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(
            f"{images.shape[0]} images but {labels.shape[0]} labels")
    k = class_count if class_count is not None else (int(labels.max()) + 1 if labels.size else 1)
    return Dataset(images[:, None, :, :] / 255.0, labels, k)


def write_idx(images, labels, images_path, labels_path):
    """Write uint8 images (n, H, W) and labels (n,) as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">4I", IDX_IMAGES_MAGIC, *images.shape))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">2I", IDX_LABELS_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


# -- CSV ----------------------------------------------------------------------

def load_csv(path, image_shape, pixel_range=255.0, class_count=None):
    """Rows are ``label, pixel_0, ..., pixel_{CHW-1}``.

    A non-numeric first row is treated as a header and skipped. Pixels are
    divided by ``pixel_range`` (255 for byte data, 1 for data already in
    [0, 1]).
    """
    image_shape = tuple(int(v) for v in image_shape)
    width = 1 + int(np.prod(image_shape))
    labels, rows = [], []
    with open(path, newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if lineno == 1 and not _is_number(row[0]):
                continue
            if len(row) != width:
                raise ParseError(
                    f"{path}: expected {width} fields, got {len(row)}", line=lineno)
            values = []
            for col, cell in enumerate(row, start=1):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"{path}: non-numeric value {cell!r}", line=lineno, column=col) from None
            label = values[0]
            if label != int(label) or label < 0:
                raise ParseError(f"{path}: bad label {row[0]!r}", line=lineno, column=1)
            labels.append(int(label))
            rows.append(values[1:])
    pixels = np.asarray(rows, dtype=np.float64).reshape((-1,) + image_shape) / pixel_range
    labels = np.asarray(labels, dtype=np.int64)
    k = class_count if class_count is not None else (int(labels.max()) + 1 if labels.size else 1)
    return Dataset(pixels, labels, k)


def _is_number(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


# -- synthetic ----------------------------------------------------------------

def synthetic(n, k=3, shape=(1, 16, 16), seed=0, noise=0.35):
    """Oriented-bar images: class ``c`` draws a bar at angle ``pi*c/k``.

    Each sample jitters the bar position, length and brightness, adds a
    random distractor blob and Gaussian pixel noise. Classes are balanced
    (counts differ by at most one).
    """
    if k < 2:
        raise ParameterError("synthetic data needs k >= 2 classes")
    rng = np.random.default_rng(seed)
    c, h, w = shape
    labels = rng.permutation(np.arange(n) % k)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    images = np.empty((n, c, h, w))
    for s in range(n):
        theta = np.pi * labels[s] / k + rng.normal(0.0, 0.08)
        cy = rng.uniform(0.3 * h, 0.7 * h)
        cx = rng.uniform(0.3 * w, 0.7 * w)
        half = rng.uniform(0.22, 0.32) * min(h, w)
        dy, dx = np.sin(theta), np.cos(theta)
        along = (yy - cy) * dy + (xx - cx) * dx
        across = -(yy - cy) * dx + (xx - cx) * dy
        bar = np.exp(-0.5 * (across / 0.7) ** 2) * (np.abs(along) <= half)
        by, bx = rng.uniform(0, h), rng.uniform(0, w)
        blob = np.exp(-((yy - by) ** 2 + (xx - bx) ** 2) / (2 * 1.3 ** 2))
        img = rng.uniform(0.6, 1.0) * bar + rng.uniform(0.2, 0.6) * blob
        images[s] = img[None] + rng.normal(0.0, noise, size=(c, h, w))
    return Dataset(np.clip(images, 0.0, 1.0), labels, k)


# -- splits -------------------------------------------------------------------

def subsample(ds, fraction, seed=0, stratified=False):
    """``floor(fraction * n)`` rows drawn uniformly without replacement.

    The selected rows keep their original relative order. With
    ``stratified=True`` each class contributes ``floor(fraction * n_c)`` rows
    instead.
    """
    if not 0 < fraction <= 1:
        raise ParameterError(f"fraction must lie in (0, 1], got {fraction}")
    n = len(ds)
    rng = np.random.default_rng(seed)
    if stratified:
        picks = []
        for c in range(ds.class_count):
            members = np.flatnonzero(ds.labels == c)
            size = int(np.floor(fraction * members.size + 1e-9))
            picks.append(rng.choice(members, size=size, replace=False))
        idx = np.sort(np.concatenate(picks))
    else:
        size = int(np.floor(fraction * n + 1e-9))
        idx = np.sort(rng.choice(n, size=size, replace=False)) if size < n else np.arange(n)
    if idx.size == 0:
        raise ParameterError(f"fraction {fraction} of {n} rows selects nothing")
    if idx.size == n:
        return ds
    return ds.take(idx)


def split(ds, train_frac=0.8, seed=0):
    """Seeded disjoint split into (train, heldout), each keeping sample order."""
    if not 0 < train_frac < 1:
        raise ParameterError(f"train_frac must lie in (0, 1), got {train_frac}")
    n = len(ds)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    cut = int(round(train_frac * n))
    return ds.take(np.sort(perm[:cut])), ds.take(np.sort(perm[cut:]))
