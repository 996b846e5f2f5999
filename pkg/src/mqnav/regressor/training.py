"""Mini-batch ADAM training with reduce-on-plateau scheduling."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.typing import NDArray

from mqnav.errors import DivergenceError, ValidationError
from mqnav.regressor.model import Normalization, RegressorModel, mse_loss

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    decay: float = 0.7
    patience: int = 4
    epochs: int = 70
    batch_size: int = 64
    window: int = 120
    val_fraction: float = 0.2
    normalize: bool = True
    restore_best: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValidationError("lr must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be >= 1")
        if not 0 < self.decay < 1:
            raise ValidationError("decay must be in (0, 1)")

    @property
    def train_stride(self) -> int:
        return self.window // 2

    @property
    def test_stride(self) -> int:
        return self.window

    def to_dict(self):
        return asdict(self)


@dataclass
class WindowDataset:
    """Windows ``X`` (N, 6, W) with scalar labels ``y`` (N,)."""

    X: NDArray[np.float64]
    y: NDArray[np.float64]

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.X.ndim != 3 or len(self.X) != len(self.y):
            raise ValidationError(f"dataset shapes X{self.X.shape} y{self.y.shape} are inconsistent")

    def __len__(self):
        return len(self.y)

    def subset(self, idx) -> WindowDataset:
        return WindowDataset(self.X[idx], self.y[idx])

    @classmethod
    def concat(cls, parts: list[WindowDataset]) -> WindowDataset:
        parts = [p for p in parts if len(p)]
        if not parts:
            raise ValidationError("no windows to concatenate")
        return cls(np.concatenate([p.X for p in parts]), np.concatenate([p.y for p in parts]))


class Adam:
    def __init__(self, params: list[NDArray], lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[NDArray]):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        step = self.lr * math.sqrt(c2) / c1
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            p -= step * m / (np.sqrt(v) + self.eps * math.sqrt(c2))


class ReduceOnPlateau:
    """Multiply the learning rate by ``factor`` once more than ``patience``
    consecutive epochs fail to improve the best loss (relative threshold)."""

    def __init__(self, optimizer: Adam, factor=0.7, patience=4, threshold=1e-4, min_lr=0.0):
        self.opt = optimizer
        self.factor = factor
        self.patience = patience
        self.threshold = threshold
        self.min_lr = min_lr
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, loss: float) -> bool:
        if loss < self.best * (1.0 - self.threshold):
            self.best = loss
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        if self.bad_epochs > self.patience:
            self.opt.lr = max(self.opt.lr * self.factor, self.min_lr)
            self.bad_epochs = 0
            return True
        return False


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def rows(self):
        return [(i, self.train_loss[i], self.val_loss[i], self.lr[i]) for i in range(len(self.train_loss))]


def split_dataset(ds: WindowDataset, val_fraction: float) -> tuple[WindowDataset, WindowDataset]:
    """Hold out the trailing fraction (windows are ordered by recording)."""
    n_val = int(round(len(ds) * val_fraction))
    if n_val == 0 or n_val >= len(ds):
        return ds, ds
    return ds.subset(slice(0, len(ds) - n_val)), ds.subset(slice(len(ds) - n_val, None))


def train(model: RegressorModel, dataset: WindowDataset, cfg: TrainConfig | None = None,
          val: WindowDataset | None = None, progress=None) -> tuple[RegressorModel, TrainHistory]:
    """Train ``model`` in place; returns it together with per-epoch losses.

    Without an explicit ``val`` set the trailing ``cfg.val_fraction`` of
    ``dataset`` is held out. Results are bit-reproducible for a given
    ``cfg.seed``.
    """
    cfg = cfg or TrainConfig()
    if len(dataset) == 0:
        raise ValidationError("training set is empty")
    if not np.all(np.isfinite(dataset.y)):
        raise ValidationError("training labels must be finite")
    if val is None:
        dataset, val = split_dataset(dataset, cfg.val_fraction)
    if cfg.normalize:
        model.norm = Normalization.fit(dataset.X, dataset.y)
    model.set_dropout_seed(cfg.seed + 7919)
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.get_params(), cfg.lr, cfg.betas, cfg.eps)
    sched = ReduceOnPlateau(opt, cfg.decay, cfg.patience)
    hist = TrainHistory()
    best_params, best_val = model.copy_params(), math.inf
    n = len(dataset)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = np.sort(order[start : start + cfg.batch_size])
            preds = model.forward_batch(dataset.X[idx], training=True)
            loss = model.backward_batch(preds, dataset.y[idx])
            if not math.isfinite(loss):
                raise DivergenceError(f"training diverged at epoch {epoch} (loss={loss})")
            opt.step(model.get_grads())
            total += loss * len(idx)
        train_loss = total / n
        val_loss = mse_loss(model.predict(val.X), val.y)
        if not math.isfinite(val_loss):
            raise DivergenceError(f"validation loss became non-finite at epoch {epoch}")
        hist.train_loss.append(train_loss)
        hist.val_loss.append(val_loss)
        hist.lr.append(opt.lr)
        if val_loss < best_val:
            best_val, hist.best_epoch = val_loss, epoch
            best_params = model.copy_params()
        sched.step(val_loss)
        log.debug("epoch %d train %.5g val %.5g lr %.3g", epoch, train_loss, val_loss, opt.lr)
        if progress is not None:
            progress(epoch, train_loss, val_loss)
    if cfg.restore_best:
        model.load_params(best_params)
    model.meta.update(
        train_seed=cfg.seed,
        epochs=cfg.epochs,
        best_epoch=hist.best_epoch,
        val_rmse=float(math.sqrt(min(hist.val_loss))) if cfg.restore_best else float(math.sqrt(hist.val_loss[-1])),
    )
    return model, hist
