"""Two-layer ReLU MLP with softmax cross-entropy, trained by minibatch SGD.

Parameters live in one flat vector laid out as
``[W1 (in x hidden), b1, W2 (hidden x out), b2]`` (row-major, biases omitted
when ``with_bias`` is false). Aggregation works on that vector directly.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


@dataclass(frozen=True)
class MlpArchitecture:
    input_dim: int
    hidden_dim: int = 200
    output_dim: int = 10
    with_bias: bool = True

    def __post_init__(self):
        if min(self.input_dim, self.hidden_dim, self.output_dim) < 1:
            raise ValueError("all layer sizes must be >= 1")

    @property
    def num_params(self):
        i, h, o = self.input_dim, self.hidden_dim, self.output_dim
        return i * h + h * o + ((h + o) if self.with_bias else 0)


@dataclass
class ModelParams:
    values: np.ndarray
    arch: MlpArchitecture

    def __post_init__(self):
        if self.values.ndim != 1 or len(self.values) != self.arch.num_params:
            raise ValueError(
                f"expected {self.arch.num_params} parameters, got shape {self.values.shape}"
            )

    def copy(self):
        return ModelParams(self.values.copy(), self.arch)

    def layers(self):
        """Views ``(W1, b1, W2, b2)`` into ``values``; biases are None without bias."""
        return _unpack(self.values, self.arch)


def _unpack(flat, arch):
    i, h, o = arch.input_dim, arch.hidden_dim, arch.output_dim
    pos = 0
    w1 = flat[pos:pos + i * h].reshape(i, h)
    pos += i * h
    b1 = None
    if arch.with_bias:
        b1 = flat[pos:pos + h]
        pos += h
    w2 = flat[pos:pos + h * o].reshape(h, o)
    pos += h * o
    b2 = flat[pos:pos + o] if arch.with_bias else None
    return w1, b1, w2, b2


@dataclass(frozen=True)
class TrainSpec:
    learning_rate: float = 0.001
    local_epochs: int = 1
    batch_size: int = 32

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.local_epochs < 1 or self.batch_size < 1:
            raise ValueError("local_epochs and batch_size must be >= 1")


@dataclass
class ClientDataset:
    features: np.ndarray  # (n, input_dim)
    labels: np.ndarray  # (n,)

    def __post_init__(self):
        if len(self.features) != len(self.labels):
            raise ValueError("features and labels differ in length")

    def __len__(self):
        return len(self.labels)


class LocalUpdate(NamedTuple):
    params: ModelParams
    skipped: bool


def init_params(arch: MlpArchitecture, rng: np.random.Generator, dtype=np.float64) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    flat = np.zeros(arch.num_params, dtype=dtype)
    w1, _, w2, _ = _unpack(flat, arch)
    for w in (w1, w2):
        limit = np.sqrt(6.0 / (w.shape[0] + w.shape[1]))
        w[...] = rng.uniform(-limit, limit, size=w.shape)
    return ModelParams(flat, arch)


def _check_batch(params, x, y):
    if len(y) == 0:
        raise ValueError("empty batch")
    if x.ndim != 2 or x.shape[1] != params.arch.input_dim:
        raise ValueError(f"expected features with {params.arch.input_dim} columns, got {x.shape}")
    if len(x) != len(y):
        raise ValueError("features and labels differ in length")


def _forward(w1, b1, w2, b2, x):
    z = x @ w1
    if b1 is not None:
        z += b1
    hidden = np.maximum(z, 0)
    logits = hidden @ w2
    if b2 is not None:
        logits += b2
    return hidden, logits


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _loss_grad_into(flat, arch, x, y, grad):
    """Mean cross-entropy of the batch; writes the gradient into ``grad``."""
    w1, b1, w2, b2 = _unpack(flat, arch)
    g1, gb1, g2, gb2 = _unpack(grad, arch)
    hidden, logits = _forward(w1, b1, w2, b2, x)
    logp = _log_softmax(logits)
    rows = np.arange(len(y))
    loss = -logp[rows, y].mean()

    dlogits = np.exp(logp)
    dlogits[rows, y] -= 1
    dlogits /= len(y)
    np.matmul(hidden.T, dlogits, out=g2)
    dhidden = dlogits @ w2.T
    dhidden[hidden <= 0] = 0
    np.matmul(x.T, dhidden, out=g1)
    if b1 is not None:
        gb1[...] = dhidden.sum(axis=0)
        gb2[...] = dlogits.sum(axis=0)
    return float(loss)


def loss_and_grad(params: ModelParams, features, labels):
    x = np.asarray(features, dtype=params.values.dtype)
    y = np.asarray(labels, dtype=np.int64)
    _check_batch(params, x, y)
    grad = np.zeros_like(params.values)
    loss = _loss_grad_into(params.values, params.arch, x, y, grad)
    return loss, grad


def local_train(params: ModelParams, data: ClientDataset, spec: TrainSpec,
                rng: np.random.Generator) -> LocalUpdate:
    """``local_epochs`` passes of shuffled minibatch SGD; the last batch may be short."""
    n = len(data)
    if n == 0:
        return LocalUpdate(params.copy(), True)
    x = np.asarray(data.features, dtype=params.values.dtype)
    y = np.asarray(data.labels, dtype=np.int64)
    _check_batch(params, x, y)
    flat = params.values.copy()
    grad = np.zeros_like(flat)
    lr = spec.learning_rate
    b = spec.batch_size
    for _ in range(spec.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, b):
            idx = order[start:start + b]
            _loss_grad_into(flat, params.arch, x[idx], y[idx], grad)
            flat -= lr * grad
    return LocalUpdate(ModelParams(flat, params.arch), False)


def evaluate(params: ModelParams, data: ClientDataset, chunk: int = 4096):
    """Mean cross-entropy and accuracy over ``data``; argmax ties go to the lowest class."""
    n = len(data)
    if n == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    w1, b1, w2, b2 = params.layers()
    total = 0.0
    correct = 0
    for start in range(0, n, chunk):
        x = np.asarray(data.features[start:start + chunk], dtype=params.values.dtype)
        y = np.asarray(data.labels[start:start + chunk], dtype=np.int64)
        _check_batch(params, x, y)
        _, logits = _forward(w1, b1, w2, b2, x)
        total += -_log_softmax(logits)[np.arange(len(y)), y].sum()
        correct += int((logits.argmax(axis=1) == y).sum())
    return float(total / n), correct / n


# checkpoint: little-endian header followed by the raw parameter vector
_MAGIC = b"SFLCKPT1"
_HEADER = struct.Struct("<8sIIIBBxxQQQ")
_PRECISION = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


def save_checkpoint(path, params: ModelParams, seed: int = 0, round: int = 0) -> None:
    a = params.arch
    width = params.values.dtype.itemsize
    if width not in _PRECISION:
        raise ValueError(f"unsupported parameter dtype {params.values.dtype}")
    header = _HEADER.pack(_MAGIC, a.input_dim, a.hidden_dim, a.output_dim, int(a.with_bias),
                          width, seed, round, len(params.values))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(params.values.astype(_PRECISION[width], copy=False).tobytes())


def load_checkpoint(path):
    """Returns ``(params, seed, round)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError("checkpoint truncated")
    magic, i, h, o, bias, width, seed, rnd, count = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError("not a checkpoint file")
    if width not in _PRECISION:
        raise ValueError(f"bad precision field {width}")
    arch = MlpArchitecture(i, h, o, bool(bias))
    if count != arch.num_params or len(raw) != _HEADER.size + count * width:
        raise ValueError("checkpoint size does not match its header")
    values = np.frombuffer(raw, dtype=_PRECISION[width], offset=_HEADER.size).astype(
        _PRECISION[width].newbyteorder("="))
    return ModelParams(values, arch), seed, rnd
