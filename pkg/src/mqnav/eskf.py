"""15-state error-state EKF for a flat-earth strapdown INS.

Error-state ordering is ``(dp, dv, eps, b_a, b_g)``. Errors are defined as
INS minus truth; the attitude error ``eps`` satisfies
``T_ins = (I + [eps x]) T_true``. Bias states hold the residual error of
the running bias estimate, so injection *adds* them to the estimate.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from numpy.typing import ArrayLike, NDArray

from mqnav.errors import UpdateRejected, ValidationError
from mqnav.mechanization import NavState
from mqnav.navcore import Attitude, quat_from_rotvec, quat_multiply, skew

N_STATES = 15
P_BLOCK = slice(0, 3)
V_BLOCK = slice(3, 6)
ATT_BLOCK = slice(6, 9)
BA_BLOCK = slice(9, 12)
BG_BLOCK = slice(12, 15)

MAX_CONDITION = 1e12
DIVERGENCE_ANGLE = 0.5


class Source(str, Enum):
    GNSS = "GNSS"
    MQN = "MQN"


@dataclass(frozen=True, eq=False)
class PositionFix:
    """Timestamped position measurement ``z`` [m] with covariance ``R`` [m^2]."""

    t: float
    z: NDArray[np.float64]
    R: NDArray[np.float64]
    source: Source = Source.GNSS

    def __post_init__(self):
        object.__setattr__(self, "z", np.asarray(self.z, dtype=float).reshape(3))
        R = np.asarray(self.R, dtype=float)
        if R.ndim == 0:
            R = np.eye(3) * float(R)
        object.__setattr__(self, "R", R.reshape(3, 3))
        object.__setattr__(self, "source", Source(self.source))


@dataclass
class ErrorStateBelief:
    dx: NDArray[np.float64] = field(default_factory=lambda: np.zeros(N_STATES))
    P: NDArray[np.float64] = field(default_factory=lambda: initial_covariance())

    def __post_init__(self):
        self.dx = np.asarray(self.dx, dtype=float).reshape(N_STATES)
        self.P = np.asarray(self.P, dtype=float).reshape(N_STATES, N_STATES)

    def copy(self) -> ErrorStateBelief:
        return ErrorStateBelief(self.dx.copy(), self.P.copy())


@dataclass(frozen=True)
class NoiseConfig:
    """Continuous-time noise densities.

    Attributes
    ----------
    sigma_wa : float
        Accelerometer white noise [m/s^2/sqrt(Hz)].
    sigma_wg : float
        Gyro white noise [rad/s/sqrt(Hz)].
    sigma_ba : float
        Accelerometer bias random walk [m/s^2*sqrt(Hz)].
    sigma_bg : float
        Gyro bias random walk [rad/s*sqrt(Hz)].
    """

    sigma_wa: float = 0.0
    sigma_wg: float = 0.0
    sigma_ba: float = 0.0
    sigma_bg: float = 0.0

    def __post_init__(self):
        for name in ("sigma_wa", "sigma_wg", "sigma_ba", "sigma_bg"):
            if not getattr(self, name) >= 0:
                raise ValidationError(f"NoiseConfig.{name} must be >= 0")


@dataclass(frozen=True)
class MeasurementModel:
    H: NDArray[np.float64]
    R: NDArray[np.float64]
    source: Source = Source.GNSS

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        R = np.asarray(self.R, dtype=float)
        if H.ndim != 2 or H.shape[1] != N_STATES or R.shape != (H.shape[0], H.shape[0]):
            raise ValidationError(f"measurement shapes H{H.shape} R{R.shape} are inconsistent")
        if not np.allclose(R, R.T, atol=1e-12):
            raise ValidationError("R must be symmetric")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "R", R)


def initial_covariance(
    sigma_p: float = 1.0,
    sigma_v: float = math.sqrt(0.1),
    sigma_att: float = math.radians(1.0),
    sigma_ba: float = 0.05,
    sigma_bg: float = 0.01,
) -> NDArray[np.float64]:
    d = np.repeat([sigma_p, sigma_v, sigma_att, sigma_ba, sigma_bg], 3) ** 2
    return np.diag(d)


def position_matrix() -> NDArray[np.float64]:
    """``[I3 0 0 0 0]``: position-only measurement matrix."""
    H = np.zeros((3, N_STATES))
    H[:, P_BLOCK] = np.eye(3)
    return H


def system_matrix(s: NavState, f_b: ArrayLike) -> NDArray[np.float64]:
    """Continuous error-dynamics matrix F (flat earth: no position/velocity coupling terms)."""
    C = s.att.dcm
    F = np.zeros((N_STATES, N_STATES))
    F[P_BLOCK, V_BLOCK] = np.eye(3)
    F[V_BLOCK, ATT_BLOCK] = -skew(C @ np.asarray(f_b, dtype=float))
    F[V_BLOCK, BA_BLOCK] = C
    F[ATT_BLOCK, BG_BLOCK] = C
    return F


def shaping_matrix(s: NavState) -> NDArray[np.float64]:
    """Noise shaping matrix G (15x12) for the noise vector ``(w_a, w_g, w_ba, w_bg)``."""
    C = s.att.dcm
    G = np.zeros((N_STATES, 12))
    G[V_BLOCK, 0:3] = C
    G[ATT_BLOCK, 3:6] = C
    G[BA_BLOCK, 6:9] = np.eye(3)
    G[BG_BLOCK, 9:12] = np.eye(3)
    return G


def discretize_noise(nc: NoiseConfig, G: NDArray, t_s: float) -> NDArray[np.float64]:
    """``Q_d = G diag(q_c) G^T t_s``."""
    if not t_s > 0:
        raise ValidationError(f"t_s must be positive, got {t_s}")
    qc = np.repeat([nc.sigma_wa, nc.sigma_wg, nc.sigma_ba, nc.sigma_bg], 3) ** 2
    return (G * qc) @ G.T * t_s


def transition_matrix(F: NDArray, t_s: float) -> NDArray[np.float64]:
    """First-order transition ``I + F t_s``."""
    return np.eye(N_STATES) + F * t_s


def predict(b: ErrorStateBelief, F: NDArray, Q_d: NDArray, t_s: float) -> ErrorStateBelief:
    if not t_s > 0:
        raise ValidationError(f"t_s must be positive, got {t_s}")
    Phi = transition_matrix(F, t_s)
    P = Phi @ b.P @ Phi.T + Q_d
    P = 0.5 * (P + P.T)
    return ErrorStateBelief(b.dx.copy(), P)


@dataclass
class UpdateResult:
    belief: ErrorStateBelief
    innovation: NDArray[np.float64]
    S: NDArray[np.float64]
    K: NDArray[np.float64]
    accepted: bool = True


def update(b: ErrorStateBelief, m: MeasurementModel, z_residual: ArrayLike) -> ErrorStateBelief:
    """Kalman update with the short-form covariance ``(I - K H) P``.

    Raises :class:`~mqnav.errors.UpdateRejected` if the innovation
    covariance is ill-conditioned; the input belief is not modified.
    """
    return update_verbose(b, m, z_residual).belief


def update_verbose(b: ErrorStateBelief, m: MeasurementModel, z_residual: ArrayLike) -> UpdateResult:
    z_residual = np.asarray(z_residual, dtype=float)
    H, R = m.H, m.R
    innovation = z_residual - H @ b.dx
    S = H @ b.P @ H.T + R
    if not np.all(np.isfinite(S)) or np.linalg.cond(S) >= MAX_CONDITION:
        raise UpdateRejected(f"{m.source.value} update rejected: innovation covariance is singular")
    K = np.linalg.solve(S, H @ b.P).T
    dx = b.dx + K @ innovation
    P = (np.eye(N_STATES) - K @ H) @ b.P
    P = 0.5 * (P + P.T)
    return UpdateResult(ErrorStateBelief(dx, P), innovation, S, K)


@dataclass(frozen=True)
class BiasEstimate:
    accel: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))
    gyro: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))


def correct_attitude(att: Attitude, eps: ArrayLike) -> Attitude:
    """Remove a navigation-frame misalignment ``eps``: ``T <- Exp(-eps) T``."""
    dq = quat_from_rotvec(-np.asarray(eps, dtype=float))
    return Attitude(quat_multiply(dq, att.q))


def inject_and_reset(
    s: NavState, b: ErrorStateBelief, biases: BiasEstimate | None = None
) -> tuple[NavState, ErrorStateBelief, BiasEstimate]:
    """Feed the error estimate back into the nominal state and zero it."""
    if not np.all(np.isfinite(b.dx)):
        raise ValidationError("cannot inject a non-finite error state")
    biases = biases or BiasEstimate()
    eps = b.dx[ATT_BLOCK]
    if np.linalg.norm(eps) > DIVERGENCE_ANGLE:
        warnings.warn(
            f"attitude correction of {np.linalg.norm(eps):.3f} rad exceeds "
            f"{DIVERGENCE_ANGLE} rad; filter may be diverging",
            RuntimeWarning,
            stacklevel=2,
        )
    state = NavState(s.t, s.p - b.dx[P_BLOCK], s.v - b.dx[V_BLOCK], correct_attitude(s.att, eps))
    new_biases = BiasEstimate(biases.accel + b.dx[BA_BLOCK], biases.gyro + b.dx[BG_BLOCK])
    return state, ErrorStateBelief(np.zeros(N_STATES), b.P.copy()), new_biases


def is_psd(P: NDArray, rel_tol: float = 1e-9) -> bool:
    tr = float(np.trace(P))
    return bool(np.linalg.eigvalsh(0.5 * (P + P.T)).min() >= -rel_tol * max(tr, 1e-300))
