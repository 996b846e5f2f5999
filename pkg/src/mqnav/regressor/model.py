"""Regressor model container, shape presets and the forward/backward passes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from mqnav.errors import ValidationError
from mqnav.regressor.layers import Conv1D, Dense, Dropout, Flatten, Layer, ReLU

N_CHANNELS = 6
DEFAULT_WINDOW = 120
TARGETS = ("distance", "altitude")


@dataclass
class Normalization:
    """Per-channel input standardization and output rescaling."""

    mean: NDArray[np.float64] = field(default_factory=lambda: np.zeros(N_CHANNELS))
    std: NDArray[np.float64] = field(default_factory=lambda: np.ones(N_CHANNELS))
    label_mean: float = 0.0
    label_scale: float = 1.0

    @classmethod
    def fit(cls, X: NDArray, y: NDArray) -> Normalization:
        """Statistics from a training set ``X`` of shape (N, channels, length)."""
        mean = X.mean(axis=(0, 2))
        std = X.std(axis=(0, 2))
        std = np.where(std > 1e-12, std, 1.0)
        label_scale = float(np.std(y))
        return cls(mean, std, float(np.mean(y)), label_scale if label_scale > 1e-12 else 1.0)


class RegressorModel:
    """Ordered stack of layers mapping a (6, W) IMU window to one scalar."""

    def __init__(self, layers: list[Layer], window: int = DEFAULT_WINDOW, in_channels: int = N_CHANNELS,
                 target: str = "distance", seed: int = 0, norm: Normalization | None = None,
                 meta: dict | None = None):
        if target not in TARGETS:
            raise ValidationError(f"target must be one of {TARGETS}, got {target!r}")
        self.layers = list(layers)
        self.window = window
        self.in_channels = in_channels
        self.target = target
        self.seed = seed
        self.norm = norm or Normalization(np.zeros(in_channels), np.ones(in_channels))
        self.meta = dict(meta or {})
        self._check_shapes()

    def _check_shapes(self):
        shape = (self.window, self.in_channels)
        for layer in self.layers:
            shape = layer.output_shape(shape)
        if int(np.prod(shape)) != 1:
            raise ValidationError(f"model must end in a single output, got shape {shape}")

    def parametric_layers(self):
        return [layer for layer in self.layers if layer.params]

    def n_params(self) -> int:
        """Parameter count derived from the layer descriptors."""
        return sum(layer.n_params() for layer in self.layers)

    def n_params_stored(self) -> int:
        return sum(p.size for layer in self.layers for p in layer.params.values())

    def descriptors(self):
        return [layer.descriptor() for layer in self.layers]

    def set_dropout_seed(self, seed: int):
        for layer in self.layers:
            if isinstance(layer, Dropout):
                layer.rng = np.random.default_rng(seed)

    def _prepare(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 2:
            X = X[None]
        if X.shape[1:] != (self.in_channels, self.window):
            raise ValidationError(f"expected windows of shape ({self.in_channels}, {self.window}), got {X.shape[1:]}")
        Z = (X - self.norm.mean[None, :, None]) / self.norm.std[None, :, None]
        return np.ascontiguousarray(Z.transpose(0, 2, 1))

    def forward_batch(self, X, training: bool = False) -> NDArray[np.float64]:
        h = self._prepare(X)
        for layer in self.layers:
            h = layer.forward(h, training=training)
        return self.norm.label_mean + self.norm.label_scale * h.reshape(-1)

    def backward_batch(self, preds, targets) -> float:
        """Backprop the mean-squared error of the last ``forward_batch``.

        Leaves gradients in each layer's ``grads`` and returns the loss.
        """
        resid = np.asarray(preds) - np.asarray(targets, dtype=float)
        n = resid.size
        g = (2.0 / n) * resid * self.norm.label_scale
        g = g.reshape(n, 1)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return float(np.mean(resid**2))

    def predict(self, X, batch_size: int = 256) -> NDArray[np.float64]:
        X = np.asarray(X, dtype=float)
        if X.ndim == 2:
            return self.forward_batch(X)
        return np.concatenate(
            [self.forward_batch(X[i : i + batch_size]) for i in range(0, len(X), batch_size)]
        ) if len(X) else np.zeros(0)

    def get_params(self) -> list[NDArray]:
        return [p for layer in self.parametric_layers() for p in layer.params.values()]

    def get_grads(self) -> list[NDArray]:
        return [layer.grads[k] for layer in self.parametric_layers() for k in layer.params]

    def copy_params(self) -> list[NDArray]:
        return [p.copy() for p in self.get_params()]

    def load_params(self, values: list[NDArray]):
        params = self.get_params()
        if len(values) != len(params):
            raise ValidationError("parameter list length mismatch")
        for dst, src in zip(params, values):
            dst[...] = src

    def __repr__(self):
        kinds = ",".join(layer.kind for layer in self.layers)
        return f"RegressorModel(target={self.target}, layers=[{kinds}], params={self.n_params()})"


def forward(m: RegressorModel, x) -> float:
    """Inference on one channels-first window; dropout is disabled."""
    return float(m.forward_batch(np.asarray(x, dtype=float)[None] if np.ndim(x) == 2 else x)[0])


def backward(m: RegressorModel, x, target: float) -> list[dict]:
    """Gradients of ``(pred - target)**2`` for one window, one dict per parametric layer."""
    pred = m.forward_batch(np.asarray(x, dtype=float)[None], training=False)
    m.backward_batch(pred, [target])
    return [{k: v.copy() for k, v in layer.grads.items()} for layer in m.parametric_layers()]


def mse_loss(preds, targets) -> float:
    preds = np.asarray(preds, dtype=float).reshape(-1)
    targets = np.asarray(targets, dtype=float).reshape(-1)
    if preds.size == 0 or preds.size != targets.size:
        raise ValidationError("mse_loss needs equal, non-empty sequences")
    return float(np.mean((targets - preds) ** 2))


def build(spec: list[tuple], window: int = DEFAULT_WINDOW, in_channels: int = N_CHANNELS,
          target: str = "distance", seed: int = 0) -> RegressorModel:
    """Build a model from a compact spec, inferring input sizes.

    Spec entries: ``("conv", out_ch, kernel[, stride])``, ``("relu",)``,
    ``("flatten",)``, ``("dropout", rate)``, ``("fc", n_out)``.
    """
    layers: list[Layer] = []
    shape: tuple = (window, in_channels)
    for entry in spec:
        kind, *args = entry
        if kind == "conv":
            layer = Conv1D(shape[-1], args[0], args[1], args[2] if len(args) > 2 else 1)
        elif kind == "relu":
            layer = ReLU()
        elif kind == "flatten":
            layer = Flatten()
        elif kind == "dropout":
            layer = Dropout(args[0])
        elif kind == "fc":
            layer = Dense(int(np.prod(shape)), args[0])
        else:
            raise ValidationError(f"unknown layer spec {entry!r}")
        shape = layer.output_shape(shape)
        layers.append(layer)
    model = RegressorModel(layers, window, in_channels, target, seed)
    init_weights(model, seed)
    return model


def init_weights(model: RegressorModel, seed: int):
    """He-normal weights, zero biases; the output layer is scaled down."""
    rng = np.random.default_rng(seed)
    parametric = model.parametric_layers()
    for i, layer in enumerate(parametric):
        W = layer.params["W"]
        fan_in = W.shape[1] * W.shape[2] if W.ndim == 3 else W.shape[0]
        gain = 2.0 if i < len(parametric) - 1 else 0.1
        W[...] = rng.standard_normal(W.shape) * np.sqrt(gain / fan_in)
        layer.params["b"][...] = 0.0
    model.set_dropout_seed(seed + 1)


def mini_spec(channels=(16, 32, 32, 64, 64), kernel: int = 5, dropout: float = 0.2):
    """Five conv blocks and a single output FC."""
    spec = []
    for ch in channels:
        spec += [("conv", ch, kernel), ("relu",)]
    spec += [("flatten",), ("dropout", dropout), ("fc", 1)]
    return spec


def baseline_spec(channels=(16, 32, 32, 32, 32, 64, 64), kernel: int = 9, hidden=(4096, 512),
                  dropout: float = 0.2):
    """Seven conv blocks and three FC layers (4096 -> 4096 -> 512 -> 1 at W=120)."""
    spec = []
    for ch in channels:
        spec += [("conv", ch, kernel), ("relu",)]
    spec += [("flatten",)]
    for h in hidden:
        spec += [("fc", h), ("relu",)]
    spec += [("dropout", dropout), ("fc", 1)]
    return spec


def mini_model(target: str = "distance", seed: int = 0, window: int = DEFAULT_WINDOW, **kw) -> RegressorModel:
    return build(mini_spec(**kw), window=window, target=target, seed=seed)


def baseline_model(target: str = "distance", seed: int = 0, window: int = DEFAULT_WINDOW, **kw) -> RegressorModel:
    return build(baseline_spec(**kw), window=window, target=target, seed=seed)


PRESETS = {"mini": mini_model, "baseline": baseline_model}
