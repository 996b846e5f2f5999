"""Full-run orchestration: strapdown propagation, EKF prediction at IMU rate,
GNSS and MQN position updates, closed-loop injection, and MQN dead reckoning.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from mqnav import eskf
from mqnav.deadreck import DrState, Regressor, Window, YawSource, dr_step, sample_yaw, window_tensor
from mqnav.errors import DivergenceError, UpdateRejected, ValidationError
from mqnav.eskf import (
    BiasEstimate,
    ErrorStateBelief,
    MeasurementModel,
    NoiseConfig,
    PositionFix,
    Source,
    discretize_noise,
    initial_covariance,
    inject_and_reset,
    position_matrix,
    predict,
    shaping_matrix,
    system_matrix,
    update_verbose,
)
from mqnav.mechanization import ImuSample, ImuStream, NavState, strapdown_step
from mqnav.metrics import aligned_metrics
from mqnav.navcore import Attitude

log = logging.getLogger(__name__)

__all__ = [
    "FusionConfig",
    "PositionFix",
    "RunMode",
    "RunResult",
    "UpdateSchedule",
    "gnss_measurement",
    "mqn_measurement",
    "run",
]

DIVERGENCE_LIMIT = 1e3
HEADING_MODELS = ("jacobian", "covariance", "none")
_TIME_TOL = 1e-6


class RunMode(str, Enum):
    INS_ONLY = "INS_only"
    INS_GNSS = "INS_GNSS"
    MQN_DR = "MQN_DR"
    MQN_EKF = "MQN_EKF"
    INS_GNSS_MQN = "INS_GNSS_MQN"

    @property
    def uses_gnss(self) -> bool:
        return self in (RunMode.INS_GNSS, RunMode.INS_GNSS_MQN)

    @property
    def uses_mqn(self) -> bool:
        return self in (RunMode.MQN_DR, RunMode.MQN_EKF, RunMode.INS_GNSS_MQN)


@dataclass(frozen=True)
class UpdateSchedule:
    """Update epochs in seconds (absolute run time)."""

    gnss_epochs: tuple[float, ...] = ()
    mqn_epochs: tuple[float, ...] = ()
    outages: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        g = tuple(float(x) for x in self.gnss_epochs)
        m = tuple(float(x) for x in self.mqn_epochs)
        if list(g) != sorted(g) or list(m) != sorted(m):
            raise ValidationError("schedule epochs must be sorted")
        gs = np.asarray(g)
        for e in m:
            if gs.size and np.min(np.abs(gs - e)) < _TIME_TOL:
                raise ValidationError(f"MQN epoch {e} coincides with a GNSS epoch")
        object.__setattr__(self, "gnss_epochs", g)
        object.__setattr__(self, "mqn_epochs", m)
        object.__setattr__(self, "outages", tuple((float(a), float(b)) for a, b in self.outages))

    @classmethod
    def interleaved(cls, t0: float, t_end: float, gnss_period=1.0, mqn_offset=1.5, mqn_period=1.0,
                    outages=()) -> UpdateSchedule:
        """GNSS every ``gnss_period`` s, MQN at ``mqn_offset + k * mqn_period`` (relative to ``t0``)."""
        span = t_end - t0 + _TIME_TOL
        g = [t0 + gnss_period * k for k in range(1, int(span / gnss_period) + 1)]
        m = [t0 + mqn_offset + mqn_period * k for k in range(int(max(span - mqn_offset, -1) / mqn_period) + 1)]
        return cls(tuple(g), tuple(e for e in m if e <= t_end + _TIME_TOL), tuple(outages))

    @classmethod
    def for_mode(cls, mode: RunMode, t0: float, t_end: float, window_s: float = 1.0, outages=()) -> UpdateSchedule:
        mode = RunMode(mode)
        if mode == RunMode.INS_GNSS_MQN:
            return cls.interleaved(t0, t_end, outages=outages)
        if mode == RunMode.INS_GNSS:
            return replace(cls.interleaved(t0, t_end, outages=outages), mqn_epochs=())
        if mode in (RunMode.MQN_EKF, RunMode.MQN_DR):
            n = int((t_end - t0 + _TIME_TOL) / window_s)
            return cls((), tuple(t0 + window_s * k for k in range(1, n + 1)), tuple(outages))
        return cls((), (), tuple(outages))

    def in_outage(self, t: float) -> bool:
        return any(a - 1e-9 <= t <= b + 1e-9 for a, b in self.outages)


@dataclass(frozen=True)
class FusionConfig:
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    P0: NDArray | None = None
    gnss_sigma: float | None = None
    mqn_sigma: float | None = None
    mqn_sigma_z: float | None = None
    window: int = 120
    platform: str = "quadrotor"
    yaw_at: str = "mid"
    reanchor: bool = True
    clone_anchor: bool = True
    heading_model: str = "jacobian"
    dr_yaw: YawSource | None = None
    check_covariance: bool = False
    divergence_limit: float = DIVERGENCE_LIMIT

    def __post_init__(self):
        if self.platform not in ("quadrotor", "robot"):
            raise ValidationError(f"unknown platform {self.platform!r}")
        if self.heading_model not in HEADING_MODELS:
            raise ValidationError(f"heading_model must be one of {HEADING_MODELS}")
        if self.yaw_at not in ("start", "mid"):
            raise ValidationError("yaw_at must be 'start' or 'mid'")


@dataclass
class RunResult:
    mode: RunMode
    t: NDArray[np.float64]
    p: NDArray[np.float64]
    v: NDArray[np.float64] | None = None
    q: NDArray[np.float64] | None = None
    bias_accel: NDArray[np.float64] | None = None
    bias_gyro: NDArray[np.float64] | None = None
    P_diag: NDArray[np.float64] | None = None
    innovations: list[dict] = field(default_factory=list)
    dr_states: list[DrState] = field(default_factory=list)
    rejected: int = 0
    warnings: list[str] = field(default_factory=list)

    def states(self) -> list[NavState]:
        if self.v is None or self.q is None:
            raise ValidationError(f"{self.mode.value} produces positions only")
        return [NavState(float(t), p, v, Attitude(q)) for t, p, v, q in zip(self.t, self.p, self.v, self.q)]

    def metrics(self, gt_t, gt_p, tol=None) -> dict:
        return aligned_metrics(self.t, self.p, gt_t, gt_p, tol)

    def yaw(self) -> NDArray[np.float64]:
        q = self.q
        return np.arctan2(2 * (q[:, 0] * q[:, 3] + q[:, 1] * q[:, 2]), 1 - 2 * (q[:, 2] ** 2 + q[:, 3] ** 2))


def gnss_measurement(fix: PositionFix, ins_position) -> tuple[MeasurementModel, NDArray[np.float64]]:
    if fix.source != Source.GNSS:
        raise ValidationError("gnss_measurement needs a GNSS fix")
    return MeasurementModel(position_matrix(), fix.R, Source.GNSS), np.asarray(ins_position, dtype=float) - fix.z


def mqn_measurement(dr: DrState, ins_position, R_mqn, t_now: float | None = None,
                    max_age: float | None = None, platform: str = "quadrotor",
                    initial_z: float | None = None) -> tuple[MeasurementModel, NDArray[np.float64]] | None:
    """Position measurement from the dead-reckoning chain.

    Returns ``None`` (with a warning) when ``dr`` is older than ``max_age``
    relative to ``t_now``. On the robot platform the vertical component is
    pinned to ``initial_z``.
    """
    if t_now is not None and max_age is not None and t_now - dr.t > max_age + _TIME_TOL:
        warnings.warn(f"stale MQN position (age {t_now - dr.t:.3f} s); update skipped", RuntimeWarning, stacklevel=2)
        return None
    z = np.array([dr.x, dr.y, dr.z])
    if platform == "robot":
        z[2] = dr.z if initial_z is None else initial_z
    R = np.asarray(R_mqn, dtype=float)
    if R.ndim == 0:
        R = np.eye(3) * float(R)
    return MeasurementModel(position_matrix(), R, Source.MQN), np.asarray(ins_position, dtype=float) - z


def _sample_index(t: NDArray, te: float, dt: float) -> int | None:
    k = int(np.searchsorted(t, te - 0.5 * dt))
    if k < len(t) and abs(t[k] - te) <= 0.5 * dt + _TIME_TOL:
        return k
    return None


def _mqn_R(cfg: FusionConfig, regressor) -> NDArray:
    sigma = cfg.mqn_sigma
    if sigma is None:
        sigma = getattr(regressor, "sigma", None) or 0.5
    sigma_z = cfg.mqn_sigma_z
    if sigma_z is None:
        alt = getattr(regressor, "altitude", None)
        sigma_z = (alt.meta.get("val_rmse") if alt is not None else None) or sigma
    return np.diag([sigma**2, sigma**2, sigma_z**2])


def run(
    stream: ImuStream,
    fixes: Sequence[PositionFix],
    regressor: Regressor | None,
    mode: RunMode | str,
    schedule: UpdateSchedule | None = None,
    initial: NavState | None = None,
    config: FusionConfig | None = None,
) -> RunResult:
    """Run one navigation pipeline over an IMU stream.

    ``initial`` is the navigation state at the first sample time. GNSS fixes
    are used only in GNSS modes and only at the schedule's GNSS epochs (or
    at every fix time when the schedule lists none); MQN positions are
    produced at the schedule's MQN epochs from windows ending there.
    """
    mode = RunMode(mode)
    cfg = config or FusionConfig()
    if len(stream) < 2:
        raise ValidationError("run needs at least two IMU samples")
    stream.check_monotone()
    t = stream.t
    dt_nom = float(np.median(np.diff(t)))
    window_s = cfg.window * dt_nom
    if schedule is None:
        schedule = UpdateSchedule.for_mode(mode, float(t[0]), float(t[-1]), window_s)
    if initial is None:
        initial = NavState(float(t[0]), np.zeros(3), np.zeros(3), Attitude.identity())
    initial = initial.at_time(t[0])
    if mode.uses_mqn and regressor is None:
        raise ValidationError(f"{mode.value} needs a regressor")
    if mode == RunMode.MQN_DR:
        return _run_dead_reckoning(stream, regressor, schedule, initial, cfg, window_s)
    return _run_filter(stream, fixes, regressor, mode, schedule, initial, cfg, dt_nom, window_s)


def _gnss_events(stream_t, fixes, schedule, dt) -> dict[int, PositionFix]:
    events = {}
    epochs = np.asarray(schedule.gnss_epochs)
    for fx in fixes:
        if fx.source != Source.GNSS or schedule.in_outage(fx.t):
            continue
        if epochs.size and np.min(np.abs(epochs - fx.t)) > 0.5 * dt + _TIME_TOL:
            continue
        k = _sample_index(stream_t, fx.t, dt)
        if k is not None and k > 0:
            events[k] = fx
    return events


def _mqn_events(stream_t, schedule, dt, W) -> dict[int, int]:
    """Map epoch sample index -> window start index."""
    events = {}
    for e in schedule.mqn_epochs:
        k = _sample_index(stream_t, e, dt)
        if k is None or k - W < 0:
            continue
        events[k] = k - W
    return events


class _Anchor:
    """Dead-reckoning anchor taken from the filter, with an optional cloned error state.

    The clone holds the anchor's position error and its cross-covariance
    with the live error state, so MQN residuals built on the anchor are
    not mistaken for independent position information.
    """

    def __init__(self, p, P_full, t, clone: bool):
        self.p = np.array(p, dtype=float)
        self.t = t
        self.offset = np.zeros(3)
        self.R = np.zeros((3, 3))
        self.pending = np.zeros((3, 3))
        self.psi = 0.0
        if clone:
            self.Pxc = P_full[:, eskf.P_BLOCK].copy()
            self.Pcc = P_full[eskf.P_BLOCK, eskf.P_BLOCK].copy()
        else:
            self.Pxc = self.Pcc = None

    @property
    def cloned(self) -> bool:
        return self.Pxc is not None

    def state(self, t) -> DrState:
        x, y, z = self.p + self.offset
        return DrState(float(x), float(y), float(z), self.psi, float(t))


def _augmented_update(belief, anchor, model, resid, H_clone):
    """Kalman update of the live error state jointly with the anchor clone."""
    n = eskf.N_STATES
    P = np.block([[belief.P, anchor.Pxc], [anchor.Pxc.T, anchor.Pcc]])
    H = np.hstack([model.H, H_clone])
    innovation = np.asarray(resid, dtype=float) - model.H @ belief.dx
    S = H @ P @ H.T + model.R
    if not np.all(np.isfinite(S)) or np.linalg.cond(S) >= eskf.MAX_CONDITION:
        raise UpdateRejected(f"{model.source.value} update rejected: innovation covariance is singular")
    K = np.linalg.solve(S, H @ P).T
    dx = np.concatenate([belief.dx, np.zeros(3)]) + K @ innovation
    P = (np.eye(n + 3) - K @ H) @ P
    P = 0.5 * (P + P.T)
    anchor.Pxc, anchor.Pcc = P[:n, n:].copy(), P[n:, n:].copy()
    anchor.p -= dx[n:]
    return eskf.UpdateResult(ErrorStateBelief(dx[:n], P[:n, :n]), innovation, S, K)


def _run_filter(stream, fixes, regressor, mode, schedule, initial, cfg, dt_nom, window_s) -> RunResult:
    t = stream.t
    n = len(t)
    W = cfg.window
    P0 = initial_covariance() if cfg.P0 is None else np.asarray(cfg.P0, dtype=float)
    belief = ErrorStateBelief(np.zeros(eskf.N_STATES), P0.copy())
    biases = BiasEstimate()
    nav = initial

    gnss_at = _gnss_events(t, fixes, schedule, dt_nom) if mode.uses_gnss else {}
    mqn_at = _mqn_events(t, schedule, dt_nom, W) if mode.uses_mqn else {}
    starts = {s for s in mqn_at.values()}
    R_mqn = _mqn_R(cfg, regressor) if mode.uses_mqn else None
    R_gnss = None if cfg.gnss_sigma is None else np.eye(3) * cfg.gnss_sigma**2

    p_hist = np.empty((n, 3))
    v_hist = np.empty((n, 3))
    q_hist = np.empty((n, 4))
    ba_hist = np.empty((n, 3))
    bg_hist = np.empty((n, 3))
    Pd_hist = np.empty((n, eskf.N_STATES))
    yaw_hist = np.empty(n)

    result = RunResult(mode, t.copy(), p_hist)
    anchor: _Anchor | None = None
    gnss_since_anchor = False
    z0 = float(initial.p[2])
    Qd_cache: dict[float, NDArray] = {}

    def record(k):
        p_hist[k], v_hist[k], q_hist[k] = nav.p, nav.v, nav.att.q
        ba_hist[k], bg_hist[k] = biases.accel, biases.gyro
        Pd_hist[k] = np.diag(belief.P)
        yaw_hist[k] = nav.yaw

    def apply(model, resid, k, source, H_clone=None):
        nonlocal belief, nav, biases
        try:
            if anchor is not None and anchor.cloned:
                res = _augmented_update(belief, anchor, model, resid, np.zeros((3, 3)) if H_clone is None else H_clone)
            else:
                res = update_verbose(belief, model, resid)
        except UpdateRejected as exc:
            result.rejected += 1
            result.warnings.append(f"t={t[k]:.3f}: {exc}")
            log.warning("%s", exc)
            return False
        if cfg.check_covariance:
            _assert_covariance(res.belief.P, t[k], "update")
        dp = np.linalg.norm(res.belief.dx[eskf.P_BLOCK])
        if dp > cfg.divergence_limit:
            raise DivergenceError(f"{source} update at t={t[k]:.3f} s estimated a position error of {dp:.1f} m; aborting")
        result.innovations.append(
            {"t": float(t[k]), "source": source, "innovation": res.innovation.copy(), "S_diag": np.diag(res.S).copy()}
        )
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            nav, belief, biases = inject_and_reset(nav, res.belief, biases)
        result.warnings.extend(f"t={t[k]:.3f}: {w.message}" for w in caught)
        return True

    def take_anchor(k):
        nonlocal anchor, gnss_since_anchor
        # without GNSS the chain stays on its initial anchor (open loop)
        clone = cfg.clone_anchor and mode.uses_gnss
        if anchor is None or (cfg.reanchor and gnss_since_anchor):
            anchor = _Anchor(nav.p, belief.P, float(t[k]), clone)
        gnss_since_anchor = False

    record(0)
    if 0 in starts:
        take_anchor(0)
    for k in range(1, n):
        dt = float(t[k] - t[k - 1])
        f = stream.f[k - 1] - biases.accel
        w = stream.w[k - 1] - biases.gyro
        F = system_matrix(nav, f)
        Qd = Qd_cache.get(dt)
        if Qd is None:
            Qd = Qd_cache[dt] = discretize_noise(cfg.noise, shaping_matrix(nav), dt)
        belief = predict(belief, F, Qd, dt)
        if anchor is not None and anchor.cloned:
            anchor.Pxc = eskf.transition_matrix(F, dt) @ anchor.Pxc
        if cfg.check_covariance:
            _assert_covariance(belief.P, t[k], "predict")
        nav = strapdown_step(nav, ImuSample(t[k - 1], f, w), dt).at_time(t[k])

        fx = gnss_at.get(k)
        if fx is not None:
            model, resid = gnss_measurement(fx, nav.p)
            if R_gnss is not None:
                model = MeasurementModel(model.H, R_gnss, Source.GNSS)
            if apply(model, resid, k, "GNSS"):
                gnss_since_anchor = True

        start = mqn_at.get(k)
        if start is not None and anchor is not None:
            win = Window(window_tensor(stream, start, W), start, float(t[start]), float(t[k]))
            d, dh = regressor.regress([win])
            if cfg.dr_yaw is not None:
                psi = cfg.dr_yaw(win)
            else:
                psi = sample_yaw(t[start : k + 1], yaw_hist[start : k + 1], cfg.yaw_at)(win)
            step_dh = 0.0 if cfg.platform == "robot" else float(dh[0])
            anchor.offset += [float(d[0]) * math.cos(psi), float(d[0]) * math.sin(psi), step_dh]
            anchor.psi = psi
            anchor.R = anchor.R + R_mqn
            H_live = None
            if cfg.dr_yaw is None and cfg.heading_model != "none":
                # the chain's heading is the filter's own yaw, so its error is the
                # yaw error state: model it for the newest window, fold older ones into R
                across = np.array([-math.sin(psi), math.cos(psi), 0.0])
                anchor.R = anchor.R + anchor.pending
                term = float(d[0]) ** 2 * belief.P[8, 8] * np.outer(across, across)
                if cfg.heading_model == "jacobian":
                    H_live = position_matrix()
                    H_live[:, 8] = -float(d[0]) * across
                    anchor.pending = term
                else:
                    anchor.R = anchor.R + term
            chain = anchor.state(t[k])
            result.dr_states.append(chain)
            meas = mqn_measurement(chain, nav.p, anchor.R, float(t[k]), window_s, cfg.platform, z0)
            if meas is not None:
                model, resid = meas
                if H_live is not None:
                    model = MeasurementModel(H_live, model.R, Source.MQN)
                # the robot's vertical measurement is absolute, not anchor-relative
                apply(model, resid, k, "MQN", H_clone=-np.diag([1.0, 1.0, 0.0 if cfg.platform == "robot" else 1.0]))
        if k in starts:
            take_anchor(k)
        record(k)

    result.v, result.q = v_hist, q_hist
    result.bias_accel, result.bias_gyro, result.P_diag = ba_hist, bg_hist, Pd_hist
    return result


def _run_dead_reckoning(stream, regressor, schedule, initial, cfg, window_s) -> RunResult:
    """Pure MQN dead reckoning; heading comes from the uncorrected strapdown attitude."""
    t = stream.t
    n = len(t)
    W = cfg.window
    dt_nom = float(np.median(np.diff(t)))
    yaw = np.empty(n)
    nav = initial
    yaw[0] = nav.yaw
    for k in range(1, n):
        nav = strapdown_step(nav, stream[k - 1], float(t[k] - t[k - 1])).at_time(t[k])
        yaw[k] = nav.yaw
    events = sorted(_mqn_events(t, schedule, dt_nom, W).items())
    windows = [Window(window_tensor(stream, s, W), s, float(t[s]), float(t[k])) for k, s in events]
    d, dh = regressor.regress(windows) if windows else (np.zeros(0), np.zeros(0))
    yaw_src = sample_yaw(t, yaw, cfg.yaw_at)
    state = DrState.from_nav(initial)
    times, pos, states = [float(t[0])], [state.position], []
    for i, win in enumerate(windows):
        step_dh = 0.0 if cfg.platform == "robot" else float(dh[i])
        state = dr_step(state, float(d[i]), step_dh, yaw_src(win), win.t_end)
        states.append(state)
        times.append(state.t)
        pos.append(state.position)
    return RunResult(RunMode.MQN_DR, np.array(times), np.array(pos), dr_states=states)


def _assert_covariance(P, t, stage):
    if not np.allclose(P, P.T, atol=1e-9, rtol=0):
        raise AssertionError(f"covariance lost symmetry after {stage} at t={t}")
    if not eskf.is_psd(P):
        raise AssertionError(f"covariance not PSD after {stage} at t={t}")
