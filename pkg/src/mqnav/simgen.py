"""Synthetic periodic (PTS) and straight trajectories, ideal IMU inversion,
sensor corruption and GNSS fixes.

The PTS path is a constant-speed advance along ``heading`` with a lateral
sine ``A(t) sin(phi(t))``. Amplitude and frequency are drawn once per
nominal period and blended with a smoothstep, so position, velocity and
acceleration stay analytic and continuous.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.typing import NDArray

from mqnav.errors import ValidationError
from mqnav.eskf import NoiseConfig, PositionFix, Source
from mqnav.mechanization import ImuStream, NavState
from mqnav.navcore import GRAVITY, GRAVITY_NED, Attitude, dcm_from_quat, quat_multiply

MG = GRAVITY * 1e-3
UG = GRAVITY * 1e-6
DEG = math.pi / 180.0

PLATFORMS = ("quadrotor", "robot")
KINDS = ("straight", "pts")


@dataclass(frozen=True)
class TrajectorySpec:
    kind: str = "pts"
    speed: float = 3.7
    duration: float = 36.0
    amplitude: float = 1.5
    period: float = 4.0
    amplitude_jitter: float = 0.2
    period_jitter: float = 0.2
    heading: float = 0.0
    platform: str = "quadrotor"
    altitude_amplitude: float | None = None
    altitude_period: float = 12.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown trajectory kind {self.kind!r}")
        if self.platform not in PLATFORMS:
            raise ValidationError(f"unknown platform {self.platform!r}")
        if not self.duration > 0:
            raise ValidationError("duration must be positive")
        if not self.amplitude >= 0:
            raise ValidationError("amplitude must be non-negative")
        if not (self.period > 0 and self.altitude_period > 0):
            raise ValidationError("periods must be positive")
        if not (0 <= self.amplitude_jitter < 1 and 0 <= self.period_jitter < 1):
            raise ValidationError("jitter fractions must be in [0, 1)")
        if self.speed < 0:
            raise ValidationError("speed must be non-negative")

    @property
    def lateral_amplitude(self) -> float:
        return 0.0 if self.kind == "straight" else self.amplitude

    @property
    def vertical_amplitude(self) -> float:
        if self.platform == "robot":
            return 0.0
        return 0.5 if self.altitude_amplitude is None else self.altitude_amplitude

    def to_dict(self):
        return asdict(self)


def quadrotor_pts(**overrides) -> TrajectorySpec:
    """Quadrotor-like PTS: ~3.7 m/s advance, 36 s, small altitude swing."""
    return TrajectorySpec(**{"kind": "pts", "platform": "quadrotor", **overrides})


def robot_pts(**overrides) -> TrajectorySpec:
    """Ground-robot PTS: slow advance, flat."""
    base = dict(kind="pts", platform="robot", speed=0.6, duration=120.0, amplitude=0.4, period=6.0)
    return TrajectorySpec(**{**base, **overrides})


@dataclass(frozen=True)
class SensorErrorSpec:
    """IMU error budget in datasheet units; SI values are exposed as properties.

    Defaults are the Movella DOT figures (noise densities and in-run bias
    stability) plus turn-on bias spreads chosen for this package.
    """

    accel_noise_density_ug: float = 120.0
    accel_bias_instability_mg: float = 0.03
    gyro_noise_density_dps: float = 0.007
    gyro_bias_instability_dph: float = 10.0
    accel_turn_on_mg: float = 5.0
    gyro_turn_on_dps: float = 0.2
    rate_hz: float = 120.0
    seed: int = 0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if name != "seed" and not value >= 0:
                raise ValidationError(f"SensorErrorSpec.{name} must be non-negative")
        if self.rate_hz <= 0:
            raise ValidationError("rate_hz must be positive")

    @classmethod
    def zero(cls, **overrides) -> SensorErrorSpec:
        base = dict(
            accel_noise_density_ug=0.0,
            accel_bias_instability_mg=0.0,
            gyro_noise_density_dps=0.0,
            gyro_bias_instability_dph=0.0,
            accel_turn_on_mg=0.0,
            gyro_turn_on_dps=0.0,
        )
        return cls(**{**base, **overrides})

    @property
    def sigma_wa(self) -> float:
        return self.accel_noise_density_ug * UG

    @property
    def sigma_ba(self) -> float:
        return self.accel_bias_instability_mg * MG

    @property
    def sigma_wg(self) -> float:
        return self.gyro_noise_density_dps * DEG

    @property
    def sigma_bg(self) -> float:
        return self.gyro_bias_instability_dph * DEG / 3600.0

    @property
    def accel_turn_on(self) -> float:
        return self.accel_turn_on_mg * MG

    @property
    def gyro_turn_on(self) -> float:
        return self.gyro_turn_on_dps * DEG

    def noise_config(self) -> NoiseConfig:
        return NoiseConfig(self.sigma_wa, self.sigma_wg, self.sigma_ba, self.sigma_bg)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class GnssSpec:
    rate_hz: float = 1.0
    sigma: float = 1.0
    outages: tuple[tuple[float, float], ...] = ()
    seed: int = 0

    def __post_init__(self):
        if not self.rate_hz > 0:
            raise ValidationError("GNSS rate must be positive")
        if not self.sigma >= 0:
            raise ValidationError("GNSS sigma must be non-negative")
        outages = tuple((float(a), float(b)) for a, b in self.outages)
        for a, b in outages:
            if not b >= a:
                raise ValidationError(f"outage ({a}, {b}) ends before it starts")
        object.__setattr__(self, "outages", outages)

    def in_outage(self, t: float) -> bool:
        # both ends excluded: an outage (3, 7) drops fixes at t = 3..7
        return any(a - 1e-9 <= t <= b + 1e-9 for a, b in self.outages)

    def to_dict(self):
        return asdict(self)


@dataclass(eq=False)
class Truth:
    """Sampled ground truth. ``q`` holds body-to-NED quaternions, ``w`` body rates."""

    t: NDArray[np.float64]
    p: NDArray[np.float64]
    v: NDArray[np.float64]
    a: NDArray[np.float64]
    q: NDArray[np.float64]
    w: NDArray[np.float64]
    spec: TrajectorySpec | None = None

    def __len__(self):
        return len(self.t)

    @property
    def yaw(self) -> NDArray[np.float64]:
        q = self.q
        return np.arctan2(2 * (q[:, 0] * q[:, 3] + q[:, 1] * q[:, 2]), 1 - 2 * (q[:, 2] ** 2 + q[:, 3] ** 2))

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    def state(self, k: int = 0) -> NavState:
        return NavState(float(self.t[k]), self.p[k].copy(), self.v[k].copy(), Attitude(self.q[k]))

    def path_length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.p, axis=0), axis=1)))

    def horizontal_path_length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.p[:, :2], axis=0), axis=1)))

    def position_at(self, t) -> NDArray[np.float64]:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.column_stack([np.interp(t, self.t, self.p[:, i]) for i in range(3)])


def _smoothstep(u):
    return u * u * (3.0 - 2.0 * u), 6.0 * u * (1.0 - u), 6.0 - 12.0 * u


class _Modulated:
    """Knot values every ``spacing`` seconds, smoothstep-blended in between."""

    def __init__(self, knots: NDArray, spacing: float):
        self.knots = knots
        self.spacing = spacing
        deltas = np.diff(knots)
        # integral of the blended curve over each full knot interval
        self.cumulative = np.concatenate([[0.0], np.cumsum(spacing * (knots[:-1] + 0.5 * deltas))])

    def _locate(self, t):
        x = t / self.spacing
        k = np.minimum(np.floor(x).astype(int), len(self.knots) - 2)
        return k, x - k

    def values(self, t):
        k, u = self._locate(t)
        s, ds, dds = _smoothstep(u)
        k0, dk = self.knots[k], self.knots[k + 1] - self.knots[k]
        h = self.spacing
        return k0 + dk * s, dk * ds / h, dk * dds / h**2

    def integral(self, t):
        k, u = self._locate(t)
        k0, dk = self.knots[k], self.knots[k + 1] - self.knots[k]
        return self.cumulative[k] + self.spacing * (k0 * u + dk * (u**3 - 0.5 * u**4))


def _lateral(spec: TrajectorySpec, t: NDArray):
    """Lateral offset and its first two time derivatives."""
    A0 = spec.lateral_amplitude
    if A0 == 0.0:
        z = np.zeros_like(t)
        return z, z, z, z
    rng = np.random.default_rng(spec.seed)
    n_knots = int(math.ceil(spec.duration / spec.period)) + 2
    amp = A0 * (1.0 + rng.uniform(-spec.amplitude_jitter, spec.amplitude_jitter, n_knots))
    freq = (1.0 + rng.uniform(-spec.period_jitter, spec.period_jitter, n_knots)) / spec.period
    A = _Modulated(amp, spec.period)
    F = _Modulated(freq, spec.period)
    a, da, dda = A.values(t)
    f, df, _ = F.values(t)
    phi = 2 * np.pi * F.integral(t)
    dphi = 2 * np.pi * f
    ddphi = 2 * np.pi * df
    s, c = np.sin(phi), np.cos(phi)
    y = a * s
    dy = da * s + a * dphi * c
    ddy = dda * s + 2 * da * dphi * c + a * ddphi * c - a * dphi**2 * s
    return y, dy, ddy, phi


def generate_truth(spec: TrajectorySpec, dt: float) -> Truth:
    """Sample the analytic trajectory at ``t = 0, dt, ..., duration`` (inclusive)."""
    n = int(round(spec.duration / dt))
    if n < 1 or abs(n * dt - spec.duration) > 1e-9 * max(1.0, spec.duration):
        raise ValidationError(f"dt={dt} does not divide duration={spec.duration}")
    t = np.arange(n + 1) * dt
    y, dy, ddy, _ = _lateral(spec, t)
    along = np.array([math.cos(spec.heading), math.sin(spec.heading)])
    normal = np.array([-math.sin(spec.heading), math.cos(spec.heading)])

    Az = spec.vertical_amplitude
    wz = 2 * np.pi / spec.altitude_period
    # NED: climbing is negative z
    z = -Az * np.sin(wz * t)
    dz = -Az * wz * np.cos(wz * t)
    ddz = Az * wz**2 * np.sin(wz * t)

    p = np.zeros((n + 1, 3))
    v = np.zeros((n + 1, 3))
    a = np.zeros((n + 1, 3))
    p[:, :2] = np.outer(spec.speed * t, along) + np.outer(y, normal)
    v[:, :2] = spec.speed * along + np.outer(dy, normal)
    a[:, :2] = np.outer(ddy, normal)
    p[:, 2], v[:, 2], a[:, 2] = z, dz, ddz

    vh2 = v[:, 0] ** 2 + v[:, 1] ** 2
    moving = vh2 > 1e-18
    yaw = np.where(moving, np.arctan2(v[:, 1], v[:, 0]), spec.heading)
    yaw_rate = np.where(moving, (v[:, 0] * a[:, 1] - v[:, 1] * a[:, 0]) / np.where(moving, vh2, 1.0), 0.0)
    q = np.column_stack([np.cos(0.5 * yaw), np.zeros_like(t), np.zeros_like(t), np.sin(0.5 * yaw)])
    w = np.column_stack([np.zeros_like(t), np.zeros_like(t), yaw_rate])
    return Truth(t, p, v, a, q, w, spec)


def inverse_imu(truth: Truth) -> ImuStream:
    """Ideal IMU samples that the strapdown integrator maps back onto ``truth``.

    Sample ``k`` carries the mean specific force and the rotation increment
    over ``[t_k, t_{k+1}]``, shaped so the first-order quaternion update
    reproduces the increment exactly. The final sample uses the analytic
    instantaneous values.
    """
    n = len(truth)
    f = np.empty((n, 3))
    w = np.empty((n, 3))
    dts = np.diff(truth.t)
    for k in range(n - 1):
        dt = dts[k]
        C = dcm_from_quat(truth.q[k])
        mean_acc = (truth.v[k + 1] - truth.v[k]) / dt
        f[k] = C.T @ (mean_acc - GRAVITY_NED)
        q_inv = truth.q[k] * np.array([1.0, -1.0, -1.0, -1.0])
        dq = quat_multiply(q_inv, truth.q[k + 1])
        if dq[0] < 0:
            dq = -dq
        # first-order update realizes angle 2*atan(|w| dt / 2) about the rate axis
        vec_norm = float(np.linalg.norm(dq[1:]))
        w[k] = 0.0 if vec_norm == 0.0 else dq[1:] / dq[0] * (2.0 / dt)
    C = dcm_from_quat(truth.q[-1])
    f[-1] = C.T @ (truth.a[-1] - GRAVITY_NED)
    w[-1] = truth.w[-1]
    return ImuStream(truth.t.copy(), f, w)


@dataclass(frozen=True)
class SensorErrors:
    """Realized error terms, each (N, 3)."""

    accel_bias: NDArray[np.float64]
    gyro_bias: NDArray[np.float64]
    accel_noise: NDArray[np.float64]
    gyro_noise: NDArray[np.float64]


def sensor_errors(n: int, dt: float, es: SensorErrorSpec) -> SensorErrors:
    """Draw turn-on bias + bias random walk + white noise for ``n`` samples."""
    rng = np.random.default_rng(es.seed)
    turn_on_a = rng.standard_normal(3) * es.accel_turn_on
    turn_on_g = rng.standard_normal(3) * es.gyro_turn_on
    white_a = rng.standard_normal((n, 3)) * (es.sigma_wa / math.sqrt(dt))
    white_g = rng.standard_normal((n, 3)) * (es.sigma_wg / math.sqrt(dt))
    steps_a = rng.standard_normal((n, 3)) * (es.sigma_ba * math.sqrt(dt))
    steps_g = rng.standard_normal((n, 3)) * (es.sigma_bg * math.sqrt(dt))
    # random walk starts at the turn-on value on the first sample
    steps_a[0] = 0.0
    steps_g[0] = 0.0
    bias_a = turn_on_a + np.cumsum(steps_a, axis=0)
    bias_g = turn_on_g + np.cumsum(steps_g, axis=0)
    return SensorErrors(bias_a, bias_g, white_a, white_g)


def corrupt(ideal: ImuStream, es: SensorErrorSpec, return_errors: bool = False):
    """Add the sensor error model to an ideal stream (deterministic per ``es.seed``)."""
    n = len(ideal)
    dt = 1.0 / es.rate_hz
    errors = sensor_errors(n, dt, es)
    f = ideal.f.copy()
    w = ideal.w.copy()
    if es.accel_noise_density_ug or es.accel_bias_instability_mg or es.accel_turn_on_mg:
        f += errors.accel_bias + errors.accel_noise
    if es.gyro_noise_density_dps or es.gyro_bias_instability_dph or es.gyro_turn_on_dps:
        w += errors.gyro_bias + errors.gyro_noise
    out = ImuStream(ideal.t.copy(), f, w)
    return (out, errors) if return_errors else out


def gnss_fixes(truth: Truth, gs: GnssSpec) -> list[PositionFix]:
    """Noisy truth positions every ``1/rate`` s after the start, minus outages."""
    t0, t1 = float(truth.t[0]), float(truth.t[-1])
    period = 1.0 / gs.rate_hz
    n = int(math.floor((t1 - t0) / period + 1e-9))
    epochs = t0 + period * np.arange(1, n + 1)
    rng = np.random.default_rng(gs.seed)
    noise = rng.standard_normal((n, 3)) * gs.sigma
    positions = truth.position_at(epochs)
    R = np.eye(3) * gs.sigma**2
    fixes = []
    for k, te in enumerate(epochs):
        if gs.in_outage(te - t0):
            continue
        fixes.append(PositionFix(float(te), positions[k] + noise[k], R.copy(), Source.GNSS))
    return fixes


@dataclass
class SimulatedRun:
    truth: Truth
    ideal: ImuStream
    imu: ImuStream
    fixes: list[PositionFix]
    errors: SensorErrors
    trajectory: TrajectorySpec
    sensor: SensorErrorSpec
    gnss: GnssSpec

    @property
    def initial_state(self) -> NavState:
        return self.truth.state(0)


def simulate_run(
    trajectory: TrajectorySpec,
    sensor: SensorErrorSpec | None = None,
    gnss: GnssSpec | None = None,
) -> SimulatedRun:
    sensor = sensor or SensorErrorSpec()
    gnss = gnss or GnssSpec()
    truth = generate_truth(trajectory, 1.0 / sensor.rate_hz)
    ideal = inverse_imu(truth)
    imu, errors = corrupt(ideal, sensor, return_errors=True)
    return SimulatedRun(truth, ideal, imu, gnss_fixes(truth, gnss), errors, trajectory, sensor, gnss)
