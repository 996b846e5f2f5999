"""IMU windowing and position propagation from regressed distance and heading."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Protocol, Sequence

import numpy as np
from numpy.typing import NDArray

from mqnav.errors import ValidationError
from mqnav.mechanization import ImuStream, NavState
from mqnav.navcore import wrap_angle
from mqnav.regressor.model import RegressorModel
from mqnav.regressor.oracle import oracle_regressor
from mqnav.regressor.training import WindowDataset


@dataclass(frozen=True)
class DrState:
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    psi: float = 0.0
    t: float = 0.0

    @property
    def position(self) -> NDArray[np.float64]:
        return np.array([self.x, self.y, self.z])

    @classmethod
    def from_nav(cls, s: NavState) -> DrState:
        return cls(float(s.p[0]), float(s.p[1]), float(s.p[2]), s.yaw, s.t)


@dataclass(frozen=True, eq=False)
class Window:
    """``W`` consecutive samples starting at ``start``; spans ``[t_start, t_end)``."""

    tensor: NDArray[np.float64]
    start: int
    t_start: float
    t_end: float
    gt: NDArray[np.float64] | None = None

    @property
    def t_mid(self) -> float:
        return 0.5 * (self.t_start + self.t_end)

    @property
    def size(self) -> int:
        return self.tensor.shape[1]


def window_tensor(stream: ImuStream, start: int, size: int) -> NDArray[np.float64]:
    """Channels-first (6, size) block: fx, fy, fz, wx, wy, wz."""
    return np.concatenate([stream.f[start : start + size].T, stream.w[start : start + size].T])


def make_windows(stream: ImuStream, W: int, stride: int, starts: Sequence[int] | None = None) -> list[Window]:
    """Cut ``stream`` into windows at offsets ``0, stride, 2*stride, ...``.

    Trailing partial windows are dropped. ``starts`` overrides the offsets.
    """
    if W < 1 or stride < 1:
        raise ValidationError("window size and stride must be >= 1")
    n = len(stream)
    if n < W:
        warnings.warn(f"stream has {n} samples, fewer than the window size {W}", RuntimeWarning, stacklevel=2)
        return []
    dt = 1.0 / stream.rate
    if starts is None:
        starts = range(0, n - W + 1, stride)
    out = []
    for i in starts:
        if i < 0 or i + W > n:
            continue
        t_end = float(stream.t[i + W]) if i + W < n else float(stream.t[i + W - 1] + dt)
        out.append(Window(window_tensor(stream, i, W), int(i), float(stream.t[i]), t_end))
    return out


def window_labels(windows: Sequence[Window], gt_t: NDArray, gt_p: NDArray) -> tuple[NDArray, NDArray]:
    """Ground-truth ``(d, dh)`` for each window from a GT track.

    GT points strictly inside the window are kept and the end points are
    linearly interpolated at ``t_start`` and ``t_end``.
    """
    d = np.empty(len(windows))
    dh = np.empty(len(windows))
    for k, w in enumerate(windows):
        d[k], dh[k] = oracle_regressor(gt_segment(gt_t, gt_p, w.t_start, w.t_end))
    return d, dh


def gt_segment(gt_t: NDArray, gt_p: NDArray, t0: float, t1: float) -> NDArray[np.float64]:
    tol = 1e-9
    if t0 < gt_t[0] - tol or t1 > gt_t[-1] + tol:
        raise ValidationError(f"GT does not cover [{t0}, {t1}]")
    inside = (gt_t > t0 + tol) & (gt_t < t1 - tol)
    ends = np.column_stack([np.interp([t0, t1], gt_t, gt_p[:, i]) for i in range(3)])
    return np.vstack([ends[:1], gt_p[inside], ends[1:]])


def windows_dataset(stream: ImuStream, gt_t, gt_p, W: int, stride: int, target: str = "distance") -> WindowDataset:
    wins = [w for w in make_windows(stream, W, stride) if w.t_end <= gt_t[-1] + 1e-9]
    if not wins:
        return WindowDataset(np.zeros((0, 6, W)), np.zeros(0))
    d, dh = window_labels(wins, gt_t, gt_p)
    y = d if target == "distance" else dh
    return WindowDataset(np.stack([w.tensor for w in wins]), y)


def dr_step(s: DrState, d: float, dh: float, psi: float, t: float | None = None) -> DrState:
    """One dead-reckoning step: advance ``d`` along heading ``psi``, ``dh`` vertically."""
    if not all(math.isfinite(v) for v in (d, dh, psi)):
        raise ValidationError("dr_step inputs must be finite")
    return DrState(
        s.x + d * math.cos(psi),
        s.y + d * math.sin(psi),
        s.z + dh,
        psi,
        s.t if t is None else t,
    )


class Regressor(Protocol):
    def regress(self, windows: Sequence[Window]) -> tuple[NDArray, NDArray]: ...


class ModelRegressor:
    """Learned regressor: a distance model and an optional vertical model."""

    def __init__(self, distance: RegressorModel, altitude: RegressorModel | None = None):
        self.distance = distance
        self.altitude = altitude

    def regress(self, windows):
        if not windows:
            return np.zeros(0), np.zeros(0)
        X = np.stack([w.tensor for w in windows])
        d = self.distance.predict(X)
        dh = self.altitude.predict(X) if self.altitude is not None else np.zeros(len(windows))
        return d, dh

    @property
    def sigma(self) -> float | None:
        """Per-axis position noise of one step: the measured displacement RMSE
        when available, else the validation distance RMSE."""
        meta = self.distance.meta
        return meta.get("step_rmse", meta.get("val_rmse"))


class OracleRegressor:
    """Reads ``(d, dh)`` straight off a GT track (or off ``Window.gt`` when set)."""

    def __init__(self, gt_t=None, gt_p=None):
        self.gt_t = None if gt_t is None else np.asarray(gt_t, dtype=float)
        self.gt_p = None if gt_p is None else np.asarray(gt_p, dtype=float)

    @classmethod
    def from_truth(cls, truth) -> OracleRegressor:
        return cls(truth.t, truth.p)

    def regress(self, windows):
        d = np.empty(len(windows))
        dh = np.empty(len(windows))
        for k, w in enumerate(windows):
            seg = w.gt if w.gt is not None else gt_segment(self.gt_t, self.gt_p, w.t_start, w.t_end)
            d[k], dh[k] = oracle_regressor(seg)
        return d, dh


YawSource = Callable[[Window], float]


def sample_yaw(t: NDArray, yaw: NDArray, at: str = "mid") -> YawSource:
    """Yaw source reading a heading track at the window start or midpoint."""
    if at not in ("start", "mid"):
        raise ValidationError(f"yaw sampling point must be 'start' or 'mid', got {at!r}")
    t = np.asarray(t, dtype=float)
    unwrapped = np.unwrap(np.asarray(yaw, dtype=float))

    def source(w: Window) -> float:
        tq = w.t_start if at == "start" else w.t_mid
        return float(wrap_angle(np.interp(tq, t, unwrapped)))

    return source


def strapdown_yaw(states: Sequence[NavState], at: str = "mid") -> YawSource:
    return sample_yaw(np.array([s.t for s in states]), np.array([s.yaw for s in states]), at)


def chord_yaw(gt_t: NDArray, gt_p: NDArray) -> YawSource:
    """Heading of the straight line between the window's GT end points."""

    def source(w: Window) -> float:
        a, b = (np.interp([w.t_start, w.t_end], gt_t, gt_p[:, i]) for i in range(2))
        return math.atan2(b[1] - b[0], a[1] - a[0])

    return source


def run_dead_reckoning(
    stream: ImuStream,
    regressor: Regressor,
    yaw_source: YawSource,
    initial: DrState,
    W: int = 120,
    platform: str = "quadrotor",
    windows: Sequence[Window] | None = None,
) -> list[DrState]:
    """Propagate ``initial`` through non-overlapping windows; one state per window.

    In ``robot`` mode the vertical coordinate is held at its initial value.
    """
    if platform not in ("quadrotor", "robot"):
        raise ValidationError(f"unknown platform {platform!r}")
    if windows is None:
        if len(stream) > 1:
            rates = 1.0 / np.diff(stream.t)
            if np.ptp(rates) > 0.01 * np.median(rates):
                raise ValidationError("run_dead_reckoning needs a constant sample rate")
        windows = make_windows(stream, W, W)
    d, dh = regressor.regress(windows)
    s = replace(initial)
    out = []
    for k, w in enumerate(windows):
        step_dh = 0.0 if platform == "robot" else float(dh[k])
        s = dr_step(s, float(d[k]), step_dh, yaw_source(w), w.t_end)
        out.append(s)
    return out


def displacement_rmse(stream: ImuStream, gt_t, gt_p, gt_yaw, regressor: Regressor, W: int = 120) -> float:
    """RMS horizontal error of single dead-reckoning steps against GT chords.

    Each test-stride window is stepped with the regressed distance along
    the GT heading at the window midpoint, so the figure combines
    regression error with the arc-versus-chord error of the step model.
    """
    wins = [w for w in make_windows(stream, W, W) if w.t_end <= gt_t[-1] + 1e-9]
    if not wins:
        raise ValidationError("no complete windows for displacement_rmse")
    d, _ = regressor.regress(wins)
    yaw = sample_yaw(gt_t, gt_yaw, "mid")
    err = np.empty(len(wins))
    for k, w in enumerate(wins):
        psi = yaw(w)
        a, b = (np.interp([w.t_start, w.t_end], gt_t, gt_p[:, i]) for i in range(2))
        err[k] = math.hypot(d[k] * math.cos(psi) - (a[1] - a[0]), d[k] * math.sin(psi) - (b[1] - b[0]))
    return float(np.sqrt(np.mean(err**2)))


def dr_positions(states: Sequence[DrState]) -> tuple[NDArray, NDArray]:
    return np.array([s.t for s in states]), np.array([[s.x, s.y, s.z] for s in states]).reshape(-1, 3)
