"""Small numpy classifiers with analytic gradients.

Every model is a pure function of a flat float64 parameter vector whose
layout is fixed by :class:`ModelConfig`. Three kinds are registered:

* ``logreg``: multinomial logistic regression, ``W (d x k)`` then ``b (k)``.
* ``mlp``: one ReLU hidden layer, ``W1 (d x h), b1, W2 (h x k), b2``.
* ``cnn-small``: two 3x3 same-padded conv layers (``c`` then ``2c`` channels),
  each followed by ReLU and 2x2 max-pooling, then a dense output layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, InvalidInputError

KINDS = ("logreg", "mlp", "cnn-small")

DEFAULT_LR = 0.05
DEFAULT_BATCH_SIZE = 32


@dataclass(frozen=True)
class ModelConfig:
    kind: str
    input_dim: int
    num_classes: int
    hidden_dim: int = 64
    conv_channels: int = 8
    in_channels: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.kind == "mlp" and self.hidden_dim < 1:
            raise ConfigError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.kind == "cnn-small":
            if self.conv_channels < 1 or self.in_channels < 1:
                raise ConfigError("conv_channels and in_channels must be >= 1")
            side = self.image_side
            if side * side * self.in_channels != self.input_dim:
                raise ConfigError(
                    f"cnn-small needs input_dim = in_channels * side^2, got {self.input_dim}"
                )
            if side < 4:
                raise ConfigError("cnn-small needs images of at least 4x4 pixels")

    @property
    def image_side(self) -> int:
        return math.isqrt(self.input_dim // self.in_channels)

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        """Shapes of the parameter blocks, in storage order."""
        d, k = self.input_dim, self.num_classes
        if self.kind == "logreg":
            return [(d, k), (k,)]
        if self.kind == "mlp":
            h = self.hidden_dim
            return [(d, h), (h,), (h, k), (k,)]
        c1, c2 = self.conv_channels, 2 * self.conv_channels
        pooled = self.image_side // 2 // 2
        return [
            (c1, self.in_channels, 3, 3), (c1,),
            (c2, c1, 3, 3), (c2,),
            (c2 * pooled * pooled, k), (k,),
        ]

    @property
    def num_params(self) -> int:
        return sum(math.prod(s) for s in self.shapes)


class Batch(NamedTuple):
    features: np.ndarray
    labels: np.ndarray


def _unpack(params: np.ndarray, config: ModelConfig) -> list[np.ndarray]:
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 1 or params.size != config.num_params:
        raise InvalidInputError(
            f"parameter vector has shape {params.shape}, expected ({config.num_params},)"
        )
    blocks, start = [], 0
    for shape in config.shapes:
        size = math.prod(shape)
        blocks.append(params[start:start + size].reshape(shape))
        start += size
    return blocks


def _check_features(features, config: ModelConfig) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != config.input_dim:
        raise InvalidInputError(
            f"features have shape {x.shape}, expected (b, {config.input_dim})"
        )
    return x


def _check_batch(batch, config: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    x = _check_features(batch.features, config)
    y = np.asarray(batch.labels)
    if y.shape != (x.shape[0],) or x.shape[0] < 1:
        raise InvalidInputError(
            f"labels have shape {y.shape} for {x.shape[0]} feature rows"
        )
    if y.min() < 0 or y.max() >= config.num_classes:
        raise InvalidInputError(f"labels must lie in [0, {config.num_classes})")
    return x, y.astype(np.int64, copy=False)


def init_params(config: ModelConfig, seed: int) -> np.ndarray:
    """Glorot-uniform weights, zero biases; deterministic in (config, seed)."""
    rng = np.random.default_rng(seed)
    parts = []
    for shape in config.shapes:
        if len(shape) == 1:
            parts.append(np.zeros(shape))
            continue
        if len(shape) == 4:
            fan_in, fan_out = shape[1] * 9, shape[0] * 9
        else:
            fan_in, fan_out = shape
        s = math.sqrt(6.0 / (fan_in + fan_out))
        parts.append(rng.uniform(-s, s, size=shape))
    return np.concatenate([p.ravel() for p in parts])


# -- cnn building blocks ------------------------------------------------------

def _conv_forward(x, w, b):
    n, c, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * wd, c * 9)
    out = cols @ w.reshape(w.shape[0], -1).T + b
    return out.reshape(n, h, wd, -1).transpose(0, 3, 1, 2), cols


def _conv_backward(dout, cols, x_shape, w):
    n, c, h, wd = x_shape
    dflat = dout.transpose(0, 2, 3, 1).reshape(n * h * wd, -1)
    dw = (dflat.T @ cols).reshape(w.shape)
    db = dflat.sum(axis=0)
    dcols = (dflat @ w.reshape(w.shape[0], -1)).reshape(n, h, wd, c, 3, 3)
    dxp = np.zeros((n, c, h + 2, wd + 2))
    for i in range(3):
        for j in range(3):
            dxp[:, :, i:i + h, j:j + wd] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, 1:-1, 1:-1], dw, db


def _pool_forward(x):
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    win = (x[:, :, :2 * h2, :2 * w2]
           .reshape(n, c, h2, 2, w2, 2)
           .transpose(0, 1, 2, 4, 3, 5)
           .reshape(n, c, h2, w2, 4))
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, arg


def _pool_backward(dout, arg, x_shape):
    n, c, h, w = x_shape
    h2, w2 = h // 2, w // 2
    dwin = np.zeros((n, c, h2, w2, 4))
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
    dx = np.zeros(x_shape)
    dx[:, :, :2 * h2, :2 * w2] = (dwin.reshape(n, c, h2, w2, 2, 2)
                                  .transpose(0, 1, 2, 4, 3, 5)
                                  .reshape(n, c, 2 * h2, 2 * w2))
    return dx


# -- forward / backward per kind -----------------------------------------------

def _forward(blocks, config: ModelConfig, x: np.ndarray):
    if config.kind == "logreg":
        w, b = blocks
        return x @ w + b, None
    if config.kind == "mlp":
        w1, b1, w2, b2 = blocks
        hidden = np.maximum(x @ w1 + b1, 0.0)
        return hidden @ w2 + b2, hidden
    w1, b1, w2, b2, w3, b3 = blocks
    side = config.image_side
    img = x.reshape(x.shape[0], config.in_channels, side, side)
    z1, cols1 = _conv_forward(img, w1, b1)
    a1 = np.maximum(z1, 0.0)
    p1, arg1 = _pool_forward(a1)
    z2, cols2 = _conv_forward(p1, w2, b2)
    a2 = np.maximum(z2, 0.0)
    p2, arg2 = _pool_forward(a2)
    flat = p2.reshape(x.shape[0], -1)
    cache = (img.shape, cols1, z1, arg1, p1.shape, cols2, z2, arg2, p2.shape, flat)
    return flat @ w3 + b3, cache


def _backward(blocks, config: ModelConfig, x, cache, dlogits) -> np.ndarray:
    if config.kind == "logreg":
        grads = [x.T @ dlogits, dlogits.sum(axis=0)]
    elif config.kind == "mlp":
        _, _, w2, _ = blocks
        hidden = cache
        dhidden = (dlogits @ w2.T) * (hidden > 0)
        grads = [x.T @ dhidden, dhidden.sum(axis=0), hidden.T @ dlogits, dlogits.sum(axis=0)]
    else:
        w1, _, w2, _, w3, _ = blocks
        img_shape, cols1, z1, arg1, p1_shape, cols2, z2, arg2, p2_shape, flat = cache
        dw3, db3 = flat.T @ dlogits, dlogits.sum(axis=0)
        dp2 = (dlogits @ w3.T).reshape(p2_shape)
        da2 = _pool_backward(dp2, arg2, z2.shape) * (z2 > 0)
        dp1, dw2, db2 = _conv_backward(da2, cols2, p1_shape, w2)
        da1 = _pool_backward(dp1, arg1, z1.shape) * (z1 > 0)
        _, dw1, db1 = _conv_backward(da1, cols1, img_shape, w1)
        grads = [dw1, db1, dw2, db2, dw3, db3]
    return np.concatenate([g.ravel() for g in grads])


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


# -- public operations ----------------------------------------------------------

def predict_logits(params, config: ModelConfig, features) -> np.ndarray:
    x = _check_features(features, config)
    logits, _ = _forward(_unpack(params, config), config, x)
    return logits


def predict(params, config: ModelConfig, features) -> np.ndarray:
    """Predicted class per row; ties resolve to the lowest class index."""
    return predict_logits(params, config, features).argmax(axis=1)


def loss(params, config: ModelConfig, batch) -> float:
    """Mean softmax cross-entropy over the batch."""
    x, y = _check_batch(batch, config)
    logits, _ = _forward(_unpack(params, config), config, x)
    return float(-_log_softmax(logits)[np.arange(len(y)), y].mean())


def loss_and_gradient(params, config: ModelConfig, batch) -> tuple[float, np.ndarray]:
    x, y = _check_batch(batch, config)
    blocks = _unpack(params, config)
    logits, cache = _forward(blocks, config, x)
    logp = _log_softmax(logits)
    n = len(y)
    dlogits = np.exp(logp)
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    value = float(-logp[np.arange(n), y].mean())
    return value, _backward(blocks, config, x, cache, dlogits)


def gradient(params, config: ModelConfig, batch) -> np.ndarray:
    return loss_and_gradient(params, config, batch)[1]


def sgd_step(params, grad, lr: float) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape:
        raise InvalidInputError(f"shape mismatch: params {params.shape}, grad {grad.shape}")
    return params - lr * grad


def train_local(params, config: ModelConfig, data, epochs: int,
                batch_size: int = DEFAULT_BATCH_SIZE, lr: float = DEFAULT_LR,
                seed: int = 0) -> np.ndarray:
    """Run ``epochs`` passes of mini-batch SGD over ``data``.

    Each epoch visits the rows in a fresh permutation drawn from
    ``(seed, epoch)``; the trailing partial batch is kept. The input vector
    is not modified.
    """
    x, y = _check_batch(data, config)
    if epochs < 1:
        raise InvalidInputError(f"epochs must be >= 1, got {epochs}")
    if batch_size < 1:
        raise InvalidInputError(f"batch_size must be >= 1, got {batch_size}")
    theta = np.array(params, dtype=np.float64)
    _unpack(theta, config)
    n = len(y)
    for epoch in range(epochs):
        order = np.random.default_rng([seed, epoch]).permutation(n)
        for start in range(0, n, batch_size):
            rows = order[start:start + batch_size]
            _, g = loss_and_gradient(theta, config, Batch(x[rows], y[rows]))
            theta -= lr * g
    return theta


def evaluate(params, config: ModelConfig, data) -> tuple[float, float]:
    """Return (accuracy, mean cross-entropy) of the model on ``data``."""
    x, y = _check_batch(data, config)
    logits, _ = _forward(_unpack(params, config), config, x)
    accuracy = float(np.mean(logits.argmax(axis=1) == y))
    mean_loss = float(-_log_softmax(logits)[np.arange(len(y)), y].mean())
    return accuracy, mean_loss
