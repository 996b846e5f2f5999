"""Layers for the 1D-CNN regressor.

Activations inside the network are channels-last, ``(batch, length, channels)``;
window tensors at the public boundary are channels-first ``(channels, length)``.
Every parametric layer keeps ``params`` and, after ``backward``, ``grads``
as dicts keyed by ``"W"`` and ``"b"``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from mqnav.errors import ValidationError


class Layer:
    kind = "layer"
    params: dict
    grads: dict

    def __init__(self):
        self.params = {}
        self.grads = {}

    def output_shape(self, in_shape):
        return in_shape

    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def descriptor(self) -> dict:
        return {"kind": self.kind}

    def n_params(self) -> int:
        return 0


class Conv1D(Layer):
    """Valid (unpadded) cross-correlation over time with optional stride."""

    kind = "conv1d"

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1):
        super().__init__()
        if min(in_ch, out_ch, kernel, stride) < 1:
            raise ValidationError("Conv1D sizes must be positive")
        self.in_ch, self.out_ch, self.kernel, self.stride = in_ch, out_ch, kernel, stride
        self.params = {"W": np.zeros((out_ch, in_ch, kernel)), "b": np.zeros(out_ch)}

    def out_length(self, length: int) -> int:
        if length < self.kernel:
            raise ValidationError(f"input length {length} shorter than kernel {self.kernel}")
        return (length - self.kernel) // self.stride + 1

    def output_shape(self, in_shape):
        length, ch = in_shape
        if ch != self.in_ch:
            raise ValidationError(f"Conv1D expects {self.in_ch} channels, got {ch}")
        return (self.out_length(length), self.out_ch)

    def _wmat(self):
        # (out, in, k) -> (in*k, out) matching the (in, k) order of the unfolded input
        return self.params["W"].reshape(self.out_ch, -1).T

    def forward(self, x, training=False):
        B, L, C = x.shape
        if C != self.in_ch:
            raise ValidationError(f"Conv1D expects {self.in_ch} channels, got {C}")
        L_out = self.out_length(L)
        # (B, L-k+1, C, k) view, then stride along time
        cols = sliding_window_view(x, self.kernel, axis=1)[:, :: self.stride]
        cols = cols.reshape(B, L_out, C * self.kernel)
        self._cache = (cols, L)
        return cols @ self._wmat() + self.params["b"]

    def backward(self, grad):
        cols, L = self._cache
        B, L_out, _ = grad.shape
        dW = np.tensordot(grad, cols, axes=([0, 1], [0, 1]))
        self.grads = {"W": dW.reshape(self.params["W"].shape), "b": grad.sum(axis=(0, 1))}
        dcols = (grad @ self._wmat().T).reshape(B, L_out, self.in_ch, self.kernel)
        dx = np.zeros((B, L, self.in_ch))
        span = self.stride * (L_out - 1) + 1
        for m in range(self.kernel):
            dx[:, m : m + span : self.stride] += dcols[:, :, :, m]
        return dx

    def descriptor(self):
        return {"kind": self.kind, "in_ch": self.in_ch, "out_ch": self.out_ch, "kernel": self.kernel, "stride": self.stride}

    def n_params(self):
        return self.out_ch * self.in_ch * self.kernel + self.out_ch


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training=False):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad):
        return np.where(self._mask, grad, 0.0)


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, training=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Dropout(Layer):
    """Inverted dropout; identity at inference. The mask RNG is owned by the model."""

    kind = "dropout"

    def __init__(self, rate: float):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValidationError("dropout rate must be in [0, 1)")
        self.rate = rate
        self.rng = np.random.default_rng(0)

    def forward(self, x, training=False):
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (self.rng.random(x.shape) < keep) / keep
        return x * self._mask

    def backward(self, grad):
        return grad if self._mask is None else grad * self._mask

    def descriptor(self):
        return {"kind": self.kind, "rate": self.rate}


class Dense(Layer):
    """Fully connected layer; inputs with more than two dims are flattened."""

    kind = "fc"

    def __init__(self, n_in: int, n_out: int):
        super().__init__()
        if min(n_in, n_out) < 1:
            raise ValidationError("Dense sizes must be positive")
        self.n_in, self.n_out = n_in, n_out
        self.params = {"W": np.zeros((n_in, n_out)), "b": np.zeros(n_out)}

    def output_shape(self, in_shape):
        if int(np.prod(in_shape)) != self.n_in:
            raise ValidationError(f"Dense expects {self.n_in} inputs, got shape {in_shape}")
        return (self.n_out,)

    def forward(self, x, training=False):
        self._in_shape = x.shape
        x2 = x.reshape(x.shape[0], -1)
        if x2.shape[1] != self.n_in:
            raise ValidationError(f"Dense expects {self.n_in} inputs, got {x2.shape[1]}")
        self._x = x2
        return x2 @ self.params["W"] + self.params["b"]

    def backward(self, grad):
        self.grads = {"W": self._x.T @ grad, "b": grad.sum(axis=0)}
        return (grad @ self.params["W"].T).reshape(self._in_shape)

    def descriptor(self):
        return {"kind": self.kind, "n_in": self.n_in, "n_out": self.n_out}

    def n_params(self):
        return self.n_in * self.n_out + self.n_out


def layer_from_descriptor(d: dict) -> Layer:
    kind = d["kind"]
    if kind == "conv1d":
        return Conv1D(d["in_ch"], d["out_ch"], d["kernel"], d.get("stride", 1))
    if kind == "relu":
        return ReLU()
    if kind == "flatten":
        return Flatten()
    if kind == "dropout":
        return Dropout(d["rate"])
    if kind == "fc":
        return Dense(d["n_in"], d["n_out"])
    raise ValidationError(f"unknown layer kind {kind!r}")


def conv1d_forward(x, layer: Conv1D):
    """Apply a convolution to a single channels-first window ``(in_ch, length)``."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] != layer.in_ch:
        raise ValidationError(f"expected ({layer.in_ch}, L) input, got {x.shape}")
    out = layer.forward(x.T[None], training=False)
    return out[0].T


def relu(x):
    return np.maximum(np.asarray(x, dtype=float), 0.0)
