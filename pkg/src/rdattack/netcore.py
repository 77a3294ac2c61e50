"""Dense feed-forward classifier.

Weights and activations are float32.  Softmax and the loss are evaluated in
float64 from float32 logits, so probabilities carry a single rounding and the
loss stays finite when a probability underflows.

Inference (:func:`forward`, :func:`loss`) runs through the row-independent
kernels in :mod:`rdattack.kernels`.  Gradients and training use plain numpy.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels

log = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "identity")
MODEL_MAGIC = "RDM1"


class ShapeError(ValueError):
    """Input dimensions do not match the network."""


class ModelFormatError(ValueError):
    """An RDM1 model file is malformed."""


def _frozen_f32(a):
    a = np.array(a, dtype=np.float32, order="C", copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DenseLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"
    _wt: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w = _frozen_f32(self.weight)
        b = _frozen_f32(self.bias)
        if w.ndim != 2 or b.ndim != 1:
            raise ShapeError(f"weight must be 2-D and bias 1-D, got {w.shape} and {b.shape}")
        if w.shape[0] != b.shape[0]:
            raise ShapeError(f"weight has {w.shape[0]} rows but bias has length {b.shape[0]}")
        if w.shape[0] == 0 or w.shape[1] == 0:
            raise ShapeError(f"empty layer {w.shape}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise ValueError("layer parameters must be finite")
        wt = np.ascontiguousarray(w.T)
        wt.setflags(write=False)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "_wt", wt)

    @property
    def in_dim(self):
        return self.weight.shape[1]

    @property
    def out_dim(self):
        return self.weight.shape[0]


class Network:
    """An immutable stack of dense layers ending in class logits."""

    def __init__(self, layers):
        layers = tuple(layers)
        if not layers:
            raise ShapeError("a network needs at least one layer")
        for k in range(1, len(layers)):
            if layers[k].in_dim != layers[k - 1].out_dim:
                raise ShapeError(
                    f"layer {k} expects {layers[k].in_dim} inputs but layer {k - 1} "
                    f"produces {layers[k - 1].out_dim}"
                )
        self._layers = layers

    @property
    def layers(self):
        return self._layers

    @property
    def input_dim(self):
        return self._layers[0].in_dim

    @property
    def class_count(self):
        return self._layers[-1].out_dim

    @property
    def sizes(self):
        return [self.input_dim] + [layer.out_dim for layer in self._layers]

    def __repr__(self):
        return f"Network({'-'.join(map(str, self.sizes))})"


def init_network(sizes, seed=0, activation="relu"):
    """Glorot-uniform network with zero biases; the last layer is linear."""
    if len(sizes) < 2 or any(int(s) <= 0 for s in sizes):
        raise ValueError(f"invalid layer sizes {sizes}")
    rng = np.random.default_rng(seed)
    layers = []
    for k, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        limit = np.sqrt(6.0 / (n_in + n_out))
        w = rng.uniform(-limit, limit, size=(n_out, n_in)).astype(np.float32)
        act = "identity" if k == len(sizes) - 2 else activation
        layers.append(DenseLayer(w, np.zeros(n_out, dtype=np.float32), act))
    return Network(layers)


def _as_batch(net, x):
    a = np.asarray(x)
    single = a.ndim == 1
    a = np.ascontiguousarray(np.atleast_2d(a), dtype=np.float32)
    if a.ndim != 2 or a.shape[1] != net.input_dim:
        raise ShapeError(f"expected input of length {net.input_dim}, got shape {np.shape(x)}")
    return a, single


def logits(net, x):
    """Last-layer pre-activations for one sample or a batch."""
    h, single = _as_batch(net, x)
    for layer in net.layers:
        h = kernels.dense_forward(h, layer.weight, layer._wt, layer.bias, layer.activation == "relu")
    return h[0] if single else h


def forward(net, x):
    """Class probabilities F(x) for one sample ``(m,)`` or a batch ``(n, m)``."""
    h, single = _as_batch(net, x)
    z = logits(net, h)
    p = kernels.softmax_rows(z)
    return p[0] if single else p


def predict(net, X):
    return np.argmax(forward(net, np.atleast_2d(X)), axis=1)


def _check_label(net, y):
    if not 0 <= int(y) < net.class_count:
        raise ValueError(f"label {y} outside [0, {net.class_count})")


def _log_softmax64(z):
    z = np.asarray(z, dtype=np.float64)
    top = z.max(axis=-1, keepdims=True)
    return z - top - np.log(np.exp(z - top).sum(axis=-1, keepdims=True))


def loss(net, x, y):
    """Cross-entropy of one sample, -log F_y(x)."""
    _check_label(net, y)
    z = logits(net, np.asarray(x).reshape(-1))
    return float(-_log_softmax64(z)[int(y)])


def _forward_trace(net, X):
    """Batch forward in numpy keeping every layer's input and pre-activation."""
    inputs, pre = [], []
    h = X
    for layer in net.layers:
        inputs.append(h)
        z = h @ layer.weight.T + layer.bias
        pre.append(z)
        h = np.maximum(z, 0.0) if layer.activation == "relu" else z
    return inputs, pre


def _backward_input(net, pre, dz):
    """Propagate dLoss/dlogits back to the input."""
    for k in range(len(net.layers) - 1, -1, -1):
        d = dz @ net.layers[k].weight
        if k > 0 and net.layers[k - 1].activation == "relu":
            d = d * (pre[k - 1] > 0)
        dz = d
    return dz


def _dlogits(z, y):
    p = np.exp(_log_softmax64(z))
    p[np.arange(len(y)), y] -= 1.0
    return p.astype(np.float32)


def input_gradient(net, x, y):
    """Gradient of the cross-entropy loss with respect to the input."""
    _check_label(net, y)
    X, _ = _as_batch(net, np.asarray(x).reshape(-1))
    _, pre = _forward_trace(net, X)
    dz = _dlogits(pre[-1], np.array([int(y)]))
    return np.ascontiguousarray(_backward_input(net, pre, dz)[0], dtype=np.float32)


def input_gradients(net, X, Y):
    """Per-sample input gradients for a batch (rows independent of each other)."""
    X, _ = _as_batch(net, X)
    Y = np.asarray(Y, dtype=np.int64)
    _, pre = _forward_trace(net, X)
    return np.ascontiguousarray(_backward_input(net, pre, _dlogits(pre[-1], Y)), dtype=np.float32)


def _param_grads(weights, biases, acts, X, Y):
    """Gradients of the mean batch cross-entropy for every (weight, bias)."""
    h = X
    inputs, pre = [], []
    for w, b, act in zip(weights, biases, acts):
        inputs.append(h)
        z = h @ w.T + b
        pre.append(z)
        h = np.maximum(z, 0.0) if act == "relu" else z
    dz = _dlogits(pre[-1], Y) / np.float32(len(Y))
    grads = [None] * len(weights)
    for k in range(len(weights) - 1, -1, -1):
        grads[k] = (dz.T @ inputs[k], dz.sum(axis=0))
        if k > 0:
            dz = dz @ weights[k]
            if acts[k - 1] == "relu":
                dz = dz * (pre[k - 1] > 0)
    return grads


def parameter_gradients(net, X, Y):
    """Per-layer ``(dW, db)`` of the mean cross-entropy over the batch ``(X, Y)``."""
    X, _ = _as_batch(net, X)
    Y = np.asarray(Y, dtype=np.int64).reshape(-1)
    if Y.shape[0] != X.shape[0]:
        raise ShapeError(f"{X.shape[0]} samples but {Y.shape[0]} labels")
    for y in Y:
        _check_label(net, y)
    layers = net.layers
    return _param_grads(
        [layer.weight for layer in layers], [layer.bias for layer in layers], [layer.activation for layer in layers], X, Y
    )


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 8
    learning_rate: float = 0.1
    lr_decay_factor: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.lr_decay_factor <= 1:
            raise ValueError("lr_decay_factor must lie in (0, 1]")


def accuracy(net, data):
    if len(data) == 0:
        return float("nan")
    return float(np.mean(predict(net, data.samples) == data.labels))


def _check_data(net, data, what):
    if len(data) == 0:
        raise ValueError(f"{what} dataset is empty")
    if data.samples.shape[1] != net.input_dim:
        raise ShapeError(f"{what} samples have {data.samples.shape[1]} features, network expects {net.input_dim}")
    if int(data.labels.max()) >= net.class_count:
        raise ShapeError(f"{what} labels reach {int(data.labels.max())}, network has {net.class_count} classes")


def train(net, data, cfg, test=None, on_epoch=None):
    """Mini-batch SGD on the mean cross-entropy; returns a new network.

    After each epoch the accuracy on ``test`` (or on ``data`` when no test set
    is given) is computed; if it did not improve on the best so far the
    learning rate is multiplied by ``cfg.lr_decay_factor``.  ``on_epoch`` is
    called as ``on_epoch(epoch, accuracy, learning_rate)``.
    """
    _check_data(net, data, "training")
    if test is not None:
        _check_data(net, test, "test")
    if cfg.epochs == 0:
        return net

    rng = np.random.default_rng(cfg.seed)
    weights = [np.array(layer.weight) for layer in net.layers]
    biases = [np.array(layer.bias) for layer in net.layers]
    acts = [layer.activation for layer in net.layers]
    X, Y = data.samples, data.labels
    lr = np.float32(cfg.learning_rate)
    best = -1.0
    current = net

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(X))
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            grads = _param_grads(weights, biases, acts, X[batch], Y[batch])
            for k, (gw, gb) in enumerate(grads):
                weights[k] -= lr * gw
                biases[k] -= lr * gb

        current = Network(DenseLayer(w, b, a) for w, b, a in zip(weights, biases, acts))
        acc = accuracy(current, test if test is not None else data)
        log.info("epoch %d: accuracy %.4f (lr %.3g)", epoch + 1, acc, lr)
        if on_epoch is not None:
            on_epoch(epoch + 1, acc, float(lr))
        if acc <= best:
            lr = np.float32(lr * cfg.lr_decay_factor)
        best = max(best, acc)
    return current


# ---------------------------------------------------------------------------
# RDM1 model files
# ---------------------------------------------------------------------------


def _fmt_row(values):
    return " ".join(f"{float(v):.9g}" for v in values)


def dumps_model(net):
    lines = [MODEL_MAGIC, f"{net.input_dim} {net.class_count} {len(net.layers)}"]
    for layer in net.layers:
        lines.append(f"dense {layer.in_dim} {layer.out_dim} {layer.activation}")
        lines.extend(_fmt_row(row) for row in layer.weight)
        lines.append(_fmt_row(layer.bias))
    return "\n".join(lines) + "\n"


def save_model(net, path):
    Path(path).write_text(dumps_model(net), encoding="ascii")


def _parse_ints(text, names, where):
    parts = text.split()
    if len(parts) != len(names):
        raise ModelFormatError(f"{where}: expected {' '.join(names)}, got {text!r}")
    try:
        values = [int(p) for p in parts]
    except ValueError:
        raise ModelFormatError(f"{where}: non-integer field in {text!r}") from None
    for name, v in zip(names, values):
        if v <= 0:
            raise ModelFormatError(f"{where}: {name} must be positive, got {v}")
    return values


def loads_model(text):
    lines = text.splitlines()
    if not lines or lines[0].strip() != MODEL_MAGIC:
        found = lines[0].strip() if lines else "<empty>"
        raise ModelFormatError(f"header version: expected {MODEL_MAGIC!r}, found {found!r}")
    if len(lines) < 2:
        raise ModelFormatError("header: missing '<m> <C> <layer_count>' line")
    m, n_classes, n_layers = _parse_ints(lines[1], ("m", "C", "layer_count"), "header")

    # group payload lines under their "dense" header
    blocks = []
    for lineno, line in enumerate(lines[2:], start=3):
        if line.startswith("dense"):
            blocks.append((lineno, line, []))
        elif line.strip():
            if not blocks:
                raise ModelFormatError(f"line {lineno}: data before the first layer header")
            blocks[-1][2].append(line)
    if len(blocks) != n_layers:
        raise ModelFormatError(f"layer_count: header declares {n_layers} layers, file holds {len(blocks)}")

    layers = []
    for k, (lineno, head, body) in enumerate(blocks):
        parts = head.split()
        if len(parts) != 4:
            raise ModelFormatError(f"layer {k} (line {lineno}): expected 'dense <in> <out> <activation>'")
        n_in, n_out = _parse_ints(" ".join(parts[1:3]), ("in", "out"), f"layer {k} (line {lineno})")
        act = parts[3]
        if act not in ACTIVATIONS:
            raise ModelFormatError(f"layer {k} activation: unknown {act!r}")
        try:
            payload = np.array(" ".join(body).split(), dtype=np.float64)
        except ValueError:
            raise ModelFormatError(f"layer {k} payload: non-numeric value") from None
        expected = n_in * n_out + n_out
        if payload.size != expected:
            raise ModelFormatError(
                f"layer {k} payload: declared {n_in}x{n_out}+{n_out}={expected} floats, found {payload.size}"
            )
        if not np.isfinite(payload).all():
            raise ModelFormatError(f"layer {k} payload: non-finite value")
        w = payload[: n_in * n_out].reshape(n_out, n_in)
        b = payload[n_in * n_out :]
        layers.append(DenseLayer(w, b, act))

    if layers[0].in_dim != m:
        raise ModelFormatError(f"m: header declares {m} inputs, layer 0 takes {layers[0].in_dim}")
    for k in range(1, len(layers)):
        if layers[k].in_dim != layers[k - 1].out_dim:
            raise ModelFormatError(
                f"layer {k} in: {layers[k].in_dim} does not chain with layer {k - 1} out {layers[k - 1].out_dim}"
            )
    if layers[-1].out_dim != n_classes:
        raise ModelFormatError(f"C: header declares {n_classes} classes, last layer emits {layers[-1].out_dim}")
    return Network(layers)


def load_model(path):
    return loads_model(Path(path).read_text(encoding="ascii"))
