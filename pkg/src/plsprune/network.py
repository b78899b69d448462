"""A small numpy CNN engine for plain layer chains.

Supported layers: Conv2D, ReLU, MaxPool (2x2, stride 2), GlobalMaxPool,
GlobalAvgPool, Flatten, Dense and a final Softmax. Tensors are NCHW float64.
"""

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    DivergenceError,
    IntegrityError,
    ParameterError,
    ParseError,
    ShapeError,
    UnsupportedVersionError,
)

FORMAT_NAME = "plsprune-model"
FORMAT_VERSION = 1


class Layer:
    kind = "layer"
    param_names = ()

    def output_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def params(self):
        return {name: getattr(self, name) for name in self.param_names}

    def config(self):
        return {}


class Conv2D(Layer):
    kind = "conv2d"
    param_names = ("weight", "bias")

    def __init__(self, in_channels, out_channels, kernel=3, stride=1, padding=0,
                 weight=None, bias=None):
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel = int(kernel)
        self.stride = int(stride)
        self.padding = int(padding)
        shape = (self.out_channels, self.in_channels, self.kernel, self.kernel)
        self.weight = np.zeros(shape) if weight is None else np.asarray(weight, dtype=np.float64)
        self.bias = np.zeros(self.out_channels) if bias is None else np.asarray(bias, dtype=np.float64)
        self.grads = {}
        self._cache = None

    def config(self):
        return {"in_channels": self.in_channels, "out_channels": self.out_channels,
                "kernel": self.kernel, "stride": self.stride, "padding": self.padding}

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_channels:
            raise ShapeError(f"conv2d expects {self.in_channels} input channels, got {c}")
        ho = (h + 2 * self.padding - self.kernel) // self.stride + 1
        wo = (w + 2 * self.padding - self.kernel) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv2d kernel {self.kernel} does not fit input {h}x{w}")
        return (self.out_channels, ho, wo)

    def forward(self, x):
        p, s = self.padding, self.stride
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        win = sliding_window_view(xp, (self.kernel, self.kernel), axis=(2, 3))[:, :, ::s, ::s]
        # elementwise accumulation over (input channel, kernel row, kernel col)
        # in a fixed order. Each output value then sees the same sequence of
        # roundings whatever the filter count, and a channel whose weights are
        # all zero leaves the result bit-identical (BLAS gives neither).
        n, _, ho, wo = win.shape[:4]
        taps = np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(
            self.in_channels, self.kernel, self.kernel, 1, n * ho * wo)
        out = np.zeros((self.out_channels, n * ho * wo))
        term = np.empty_like(out)
        for c in range(self.in_channels):
            for i in range(self.kernel):
                for j in range(self.kernel):
                    np.multiply(self.weight[:, c, i, j, None], taps[c, i, j], out=term)
                    out += term
        out += self.bias[:, None]
        self._cache = (xp.shape, win)
        return out.reshape(self.out_channels, n, ho, wo).transpose(1, 0, 2, 3)

    def backward(self, dout):
        xp_shape, win = self._cache
        k, s, p = self.kernel, self.stride, self.padding
        ho, wo = dout.shape[2], dout.shape[3]
        self.grads = {
            "weight": np.tensordot(dout, win, axes=([0, 2, 3], [0, 2, 3])),
            "bias": dout.sum(axis=(0, 2, 3)),
        }
        dwin = np.tensordot(dout, self.weight, axes=([1], [0]))  # N,Ho,Wo,C,k,k
        dxp = np.zeros(xp_shape)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += \
                    dwin[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        if p:
            dxp = dxp[:, :, p:-p, p:-p]
        return dxp


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dout):
        return np.where(self._mask, dout, 0.0)


class MaxPool(Layer):
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped."""

    kind = "maxpool"

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if h < 2 or w < 2:
            raise ShapeError(f"maxpool needs spatial size >= 2, got {h}x{w}")
        return (c, h // 2, w // 2)

    def forward(self, x):
        n, c, h, w = x.shape
        h2, w2 = h // 2, w // 2
        blocks = (x[:, :, :2 * h2, :2 * w2]
                  .reshape(n, c, h2, 2, w2, 2)
                  .transpose(0, 1, 2, 4, 3, 5)
                  .reshape(n, c, h2, w2, 4))
        idx = blocks.argmax(axis=-1)
        self._cache = (x.shape, idx)
        return np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        (n, c, h, w), idx = self._cache
        h2, w2 = h // 2, w // 2
        blocks = np.zeros((n, c, h2, w2, 4))
        np.put_along_axis(blocks, idx[..., None], dout[..., None], axis=-1)
        dx = np.zeros((n, c, h, w))
        dx[:, :, :2 * h2, :2 * w2] = (blocks.reshape(n, c, h2, w2, 2, 2)
                                      .transpose(0, 1, 2, 4, 3, 5)
                                      .reshape(n, c, 2 * h2, 2 * w2))
        return dx


class GlobalMaxPool(Layer):
    kind = "global_max_pool"

    def output_shape(self, in_shape):
        return (in_shape[0],)

    def forward(self, x):
        n, c = x.shape[:2]
        flat = x.reshape(n, c, -1)
        idx = flat.argmax(axis=-1)
        self._cache = (x.shape, idx)
        return np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        shape, idx = self._cache
        flat = np.zeros((shape[0], shape[1], shape[2] * shape[3]))
        np.put_along_axis(flat, idx[..., None], dout[..., None], axis=-1)
        return flat.reshape(shape)


class GlobalAvgPool(Layer):
    kind = "global_avg_pool"

    def output_shape(self, in_shape):
        return (in_shape[0],)

    def forward(self, x):
        self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dout):
        n, c, h, w = self._shape
        return np.broadcast_to(dout[:, :, None, None] / (h * w), self._shape).copy()


class Flatten(Layer):
    """Channel-major flatten: feature ``c*H*W + y*W + x``."""

    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class Dense(Layer):
    kind = "dense"
    param_names = ("weight", "bias")

    def __init__(self, in_features, out_features, weight=None, bias=None):
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        shape = (self.in_features, self.out_features)
        self.weight = np.zeros(shape) if weight is None else np.asarray(weight, dtype=np.float64)
        self.bias = np.zeros(self.out_features) if bias is None else np.asarray(bias, dtype=np.float64)
        self.grads = {}

    def config(self):
        return {"in_features": self.in_features, "out_features": self.out_features}

    def output_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] != self.in_features:
            raise ShapeError(f"dense expects ({self.in_features},) input, got {tuple(in_shape)}")
        return (self.out_features,)

    def forward(self, x):
        self._x = x
        # sequential accumulation over input features, as in Conv2D.forward
        out = x[:, :1] * self.weight[0]
        for i in range(1, self.in_features):
            out += x[:, i:i + 1] * self.weight[i]
        return out + self.bias

    def backward(self, dout):
        self.grads = {"weight": self._x.T @ dout, "bias": dout.sum(axis=0)}
        return dout @ self.weight.T


class Softmax(Layer):
    kind = "softmax"

    def output_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ShapeError(f"softmax expects a flat input, got {tuple(in_shape)}")
        return tuple(in_shape)

    def forward(self, x):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        self._y = e / e.sum(axis=1, keepdims=True)
        return self._y

    def backward(self, dout):
        y = self._y
        return y * (dout - (dout * y).sum(axis=1, keepdims=True))


LAYER_TYPES = {cls.kind: cls for cls in
               (Conv2D, ReLU, MaxPool, GlobalMaxPool, GlobalAvgPool, Flatten, Dense, Softmax)}


class Network:
    """Ordered chain of layers ending in a softmax."""

    def __init__(self, layers, input_shape, rng_seed=0):
        self.layers = list(layers)
        self.input_shape = tuple(int(v) for v in input_shape)
        self.rng_seed = int(rng_seed)

    def shapes(self):
        """Per-sample output shape of every layer."""
        out, s = [], self.input_shape
        for layer in self.layers:
            s = layer.output_shape(s)
            out.append(s)
        return out

    @property
    def n_classes(self):
        return self.shapes()[-1][0]

    def conv_positions(self):
        return [i for i, l in enumerate(self.layers) if isinstance(l, Conv2D)]

    def conv_layers(self):
        return [l for l in self.layers if isinstance(l, Conv2D)]

    def filter_counts(self):
        return [l.out_channels for l in self.conv_layers()]

    def param_count(self):
        return sum(p.size for l in self.layers for p in l.params().values())

    def copy(self):
        """Deep copy of the weights, without forward/backward caches."""
        layers = []
        for layer in self.layers:
            clone = copy.copy(layer)
            clone.__dict__ = {k: copy.deepcopy(v) for k, v in layer.__dict__.items()
                              if not k.startswith("_") and k != "grads"}
            if layer.param_names:
                clone.grads = {}
            layers.append(clone)
        return Network(layers, self.input_shape, self.rng_seed)

    def _check_batch(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4 or x.shape[1:] != self.input_shape:
            raise ShapeError(
                f"batch shape {x.shape} does not match (N, {', '.join(map(str, self.input_shape))})")
        return x

    def forward(self, x):
        return self.forward_with_activations(x)[0]

    def forward_with_activations(self, x):
        """Run the chain, capturing each conv layer's post-nonlinearity maps.

        The captured tensor is the ReLU output when a ReLU directly follows
        the conv, otherwise the raw conv output.
        """
        x = self._check_batch(x)
        acts = []
        pending = False
        for layer in self.layers:
            x = layer.forward(x)
            if pending:
                acts[-1] = x if isinstance(layer, ReLU) else acts[-1]
                pending = False
            if isinstance(layer, Conv2D):
                acts.append(x)
                pending = True
        return x, acts

    def logits(self, x):
        x = self._check_batch(x)
        for layer in self.layers[:-1]:
            x = layer.forward(x)
        return x

    def loss_and_grad(self, x, labels):
        """Mean softmax cross-entropy; fills ``layer.grads`` for every layer."""
        labels = np.asarray(labels, dtype=np.int64)
        z = self.logits(x)
        z = z - z.max(axis=1, keepdims=True)
        logsum = np.log(np.exp(z).sum(axis=1))
        n = z.shape[0]
        loss = float(np.mean(logsum - z[np.arange(n), labels]))
        probs = np.exp(z - logsum[:, None])
        g = probs.copy()
        g[np.arange(n), labels] -= 1.0
        g /= n
        for layer in reversed(self.layers[:-1]):
            g = layer.backward(g)
        return loss, probs

    def predict(self, x, batch_size=500):
        x = np.asarray(x, dtype=np.float64)
        out = [self.logits(x[i:i + batch_size]).argmax(axis=1)
               for i in range(0, x.shape[0], batch_size)]
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)

    def fingerprint(self):
        return hashlib.sha256(dumps(self).encode()).hexdigest()


def he_uniform(rng, shape, fan_in):
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def build_cnn(input_shape=(1, 16, 16), conv_filters=(8, 16, 16), n_classes=3,
              kernel=3, pool_after=(0, 1), head="flatten", seed=0):
    """Build a VGG-style chain: [conv-relu(-maxpool)]* then a dense softmax head.

    ``head`` is ``"flatten"``, ``"gmax"`` or ``"gavg"``. Weights are He-uniform
    from ``seed``; biases start at zero.
    """
    rng = np.random.default_rng(seed)
    layers = []
    c = input_shape[0]
    for i, f in enumerate(conv_filters):
        conv = Conv2D(c, f, kernel, stride=1, padding=kernel // 2)
        conv.weight = he_uniform(rng, conv.weight.shape, c * kernel * kernel)
        layers += [conv, ReLU()]
        if i in pool_after:
            layers.append(MaxPool())
        c = f
    head_layer = {"flatten": Flatten, "gmax": GlobalMaxPool, "gavg": GlobalAvgPool}[head]()
    layers.append(head_layer)
    net = Network(layers, input_shape, seed)
    n_in = net.shapes()[-1][0]
    dense = Dense(n_in, n_classes)
    dense.weight = he_uniform(rng, dense.weight.shape, n_in)
    net.layers += [dense, Softmax()]
    return net


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 5
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ParameterError("learning_rate must be nonnegative")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ParameterError("epochs must be >= 0")


@dataclass
class TrainLog:
    loss: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)

    def to_dict(self):
        return {"loss": self.loss, "accuracy": self.accuracy}


def train_sgd(net, data, cfg):
    """Mini-batch SGD with momentum on softmax cross-entropy, in place."""
    images, labels = data.images, np.asarray(data.labels)
    n = images.shape[0]
    if n == 0:
        raise ParameterError("cannot train on an empty dataset")
    k = net.n_classes
    if labels.min() < 0 or labels.max() >= k:
        raise ParameterError(f"labels must lie in [0, {k})")
    rng = np.random.default_rng(cfg.seed)
    velocity = {(i, name): np.zeros_like(p)
                for i, layer in enumerate(net.layers) for name, p in layer.params().items()}
    log = TrainLog()
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total, correct = 0.0, 0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            loss, probs = net.loss_and_grad(images[idx], labels[idx])
            if not math.isfinite(loss):
                raise DivergenceError(epoch, b, loss)
            total += loss * idx.size
            correct += int((probs.argmax(axis=1) == labels[idx]).sum())
            for i, layer in enumerate(net.layers):
                for name, p in layer.params().items():
                    v = velocity[(i, name)]
                    v *= cfg.momentum
                    v -= cfg.learning_rate * layer.grads[name]
                    p += v
        log.loss.append(total / n)
        log.accuracy.append(correct / n)
    return log


def evaluate(net, data, batch_size=500):
    """Fraction of samples whose argmax prediction matches the label."""
    pred = net.predict(data.images, batch_size)
    return float(np.mean(pred == np.asarray(data.labels)))


@dataclass
class FlopsReport:
    total: int
    per_layer: list  # (layer position, kind, flops)

    def conv_flops(self):
        return [f for _, kind, f in self.per_layer if kind == Conv2D.kind]


def flops_count(net):
    """Multiply and add counted separately; only conv and dense layers count.

    Conv: 2*k^2*C_in*C_out*H_out*W_out. Dense: 2*n_in*n_out.
    """
    per_layer = []
    for i, (layer, out) in enumerate(zip(net.layers, net.shapes())):
        if isinstance(layer, Conv2D):
            f = 2 * layer.kernel ** 2 * layer.in_channels * layer.out_channels * out[1] * out[2]
        elif isinstance(layer, Dense):
            f = 2 * layer.in_features * layer.out_features
        else:
            f = 0
        per_layer.append((i, layer.kind, int(f)))
    return FlopsReport(sum(f for _, _, f in per_layer), per_layer)


# -- serialization ---------------------------------------------------------

def to_dict(net):
    layers = []
    for layer in net.layers:
        entry = {"type": layer.kind, **layer.config()}
        for name, p in layer.params().items():
            entry[name] = {"shape": list(p.shape), "data": p.ravel().tolist()}
        layers.append(entry)
    return {"format": FORMAT_NAME, "version": FORMAT_VERSION,
            "input_shape": list(net.input_shape), "rng_seed": net.rng_seed,
            "layers": layers}


def dumps(net):
    return json.dumps(to_dict(net), separators=(",", ":"))


def from_dict(doc):
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise IntegrityError(f"not a {FORMAT_NAME} document")
    if doc.get("version") != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"model format version {doc.get('version')!r} is not supported "
            f"(expected {FORMAT_VERSION})")
    try:
        layers = []
        for pos, entry in enumerate(doc["layers"]):
            entry = dict(entry)
            cls = LAYER_TYPES.get(entry.pop("type", None))
            if cls is None:
                raise IntegrityError(f"layer {pos}: unknown layer type")
            arrays = {}
            for name in cls.param_names:
                blob = entry.pop(name)
                shape = tuple(int(v) for v in blob["shape"])
                data = np.asarray(blob["data"], dtype=np.float64)
                if data.size != math.prod(shape):
                    raise IntegrityError(
                        f"layer {pos} ({cls.kind}) {name}: shape {shape} needs "
                        f"{math.prod(shape)} values, file has {data.size}")
                arrays[name] = data.reshape(shape)
            layer = cls(**entry)
            for name, a in arrays.items():
                setattr(layer, name, a)
            layers.append(layer)
        net = Network(layers, doc["input_shape"], doc.get("rng_seed", 0))
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, IntegrityError):
            raise
        raise IntegrityError(f"malformed model document: {e}") from e
    # imported late: surgery depends on this module
    from .surgery import validate_consistency
    problems = validate_consistency(net)
    if problems:
        raise IntegrityError("; ".join(problems))
    return net


def loads(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        offset = len(text[:e.pos].encode()) if isinstance(text, str) else e.pos
        raise ParseError(f"malformed model file: {e.msg}", offset=offset) from e
    return from_dict(doc)


def save(net, path):
    with open(path, "w") as f:
        f.write(dumps(net))


def load(path):
    with open(path, "rb") as f:
        raw = f.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ParseError("model file is not UTF-8", offset=e.start) from e
    return loads(text)
