"""Frames, attitude algebra and small linear-algebra helpers.

Conventions
-----------
* Navigation frame is local-level NED; gravity is ``(0, 0, +GRAVITY)``.
* Attitudes are unit quaternions ``(w, x, y, z)`` rotating body vectors into
  the navigation frame, ``v_n = T_b^n v_b``.
* Angles are radians everywhere inside the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from mqnav.errors import ValidationError

GRAVITY = 9.80665
GRAVITY_NED = np.array([0.0, 0.0, GRAVITY])

_GIMBAL_TOL = 1e-9


def skew(v: ArrayLike) -> NDArray[np.float64]:
    """Skew-symmetric matrix ``S`` such that ``S @ u == cross(v, u)``."""
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def quat_multiply(p: NDArray, q: NDArray) -> NDArray[np.float64]:
    """Hamilton product ``p * q`` for quaternions stored as (w, x, y, z)."""
    pw, px, py, pz = p
    qw, qx, qy, qz = q
    return np.array(
        [
            pw * qw - px * qx - py * qy - pz * qz,
            pw * qx + px * qw + py * qz - pz * qy,
            pw * qy - px * qz + py * qw + pz * qx,
            pw * qz + px * qy - py * qx + pz * qw,
        ]
    )


def quat_from_rotvec(phi: ArrayLike) -> NDArray[np.float64]:
    phi = np.asarray(phi, dtype=float)
    angle = float(np.linalg.norm(phi))
    if angle < 1e-12:
        q = np.array([1.0, 0.5 * phi[0], 0.5 * phi[1], 0.5 * phi[2]])
        return q / np.linalg.norm(q)
    axis = phi / angle
    s = math.sin(0.5 * angle)
    return np.array([math.cos(0.5 * angle), axis[0] * s, axis[1] * s, axis[2] * s])


def dcm_from_quat(q: NDArray) -> NDArray[np.float64]:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotvec_from_dcm(C: NDArray) -> NDArray[np.float64]:
    """Rotation vector (axis * angle) of a rotation matrix, for small-to-moderate angles."""
    cos_angle = np.clip(0.5 * (np.trace(C) - 1.0), -1.0, 1.0)
    angle = math.acos(cos_angle)
    w = np.array([C[2, 1] - C[1, 2], C[0, 2] - C[2, 0], C[1, 0] - C[0, 1]])
    if angle < 1e-6:
        return 0.5 * w
    return angle / (2.0 * math.sin(angle)) * w


@dataclass(frozen=True, eq=False)
class Attitude:
    """Body-to-navigation rotation stored as a unit quaternion (w, x, y, z).

    The direction-cosine matrix is derived on demand via :attr:`dcm`.
    """

    q: NDArray[np.float64]

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if q.shape != (4,) or not np.all(np.isfinite(q)):
            raise ValidationError(f"attitude quaternion must be 4 finite values, got {self.q!r}")
        n = np.linalg.norm(q)
        if n == 0.0:
            raise ValidationError("zero quaternion")
        q = q / n
        if q[0] < 0.0:
            q = -q
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @classmethod
    def identity(cls) -> Attitude:
        return cls(np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_euler(cls, roll: float, pitch: float, yaw: float) -> Attitude:
        """Build from ZYX (yaw-pitch-roll) Euler angles."""
        cr, sr = math.cos(0.5 * roll), math.sin(0.5 * roll)
        cp, sp = math.cos(0.5 * pitch), math.sin(0.5 * pitch)
        cy, sy = math.cos(0.5 * yaw), math.sin(0.5 * yaw)
        return cls(
            np.array(
                [
                    cy * cp * cr + sy * sp * sr,
                    cy * cp * sr - sy * sp * cr,
                    cy * sp * cr + sy * cp * sr,
                    sy * cp * cr - cy * sp * sr,
                ]
            )
        )

    @classmethod
    def from_yaw(cls, yaw: float) -> Attitude:
        return cls(np.array([math.cos(0.5 * yaw), 0.0, 0.0, math.sin(0.5 * yaw)]))

    @classmethod
    def from_rotvec(cls, phi: ArrayLike) -> Attitude:
        return cls(quat_from_rotvec(phi))

    @classmethod
    def from_dcm(cls, C: ArrayLike) -> Attitude:
        C = np.asarray(C, dtype=float)
        tr = np.trace(C)
        if tr > 0:
            s = 2.0 * math.sqrt(tr + 1.0)
            q = [0.25 * s, (C[2, 1] - C[1, 2]) / s, (C[0, 2] - C[2, 0]) / s, (C[1, 0] - C[0, 1]) / s]
        elif C[0, 0] > C[1, 1] and C[0, 0] > C[2, 2]:
            s = 2.0 * math.sqrt(1.0 + C[0, 0] - C[1, 1] - C[2, 2])
            q = [(C[2, 1] - C[1, 2]) / s, 0.25 * s, (C[0, 1] + C[1, 0]) / s, (C[0, 2] + C[2, 0]) / s]
        elif C[1, 1] > C[2, 2]:
            s = 2.0 * math.sqrt(1.0 + C[1, 1] - C[0, 0] - C[2, 2])
            q = [(C[0, 2] - C[2, 0]) / s, (C[0, 1] + C[1, 0]) / s, 0.25 * s, (C[1, 2] + C[2, 1]) / s]
        else:
            s = 2.0 * math.sqrt(1.0 + C[2, 2] - C[0, 0] - C[1, 1])
            q = [(C[1, 0] - C[0, 1]) / s, (C[0, 2] + C[2, 0]) / s, (C[1, 2] + C[2, 1]) / s, 0.25 * s]
        return cls(np.array(q))

    @property
    def dcm(self) -> NDArray[np.float64]:
        """``T_b^n``: maps body-frame vectors into the navigation frame."""
        return dcm_from_quat(self.q)

    def euler(self) -> tuple[float, float, float]:
        """ZYX Euler angles ``(roll, pitch, yaw)``."""
        w, x, y, z = self.q
        roll = math.atan2(2 * (w * x + y * z), 1 - 2 * (x * x + y * y))
        pitch = math.asin(max(-1.0, min(1.0, 2 * (w * y - z * x))))
        return roll, pitch, yaw_of(self)

    def compose(self, other: Attitude) -> Attitude:
        """``self * other``: apply ``other`` first (in body), then ``self``."""
        return Attitude(quat_multiply(self.q, other.q))

    def rotate(self, v: ArrayLike) -> NDArray[np.float64]:
        return self.dcm @ np.asarray(v, dtype=float)

    def __repr__(self):
        return f"Attitude(q={np.array2string(self.q, precision=6)})"


def attitude_integrate(a: Attitude, omega: ArrayLike, dt: float) -> Attitude:
    """Advance ``a`` by the body-frame rate ``omega`` over ``dt`` seconds.

    First-order quaternion update ``q (x) [1, omega*dt/2]`` followed by
    renormalization.
    """
    omega = np.asarray(omega, dtype=float)
    if not (np.all(np.isfinite(omega)) and math.isfinite(dt)):
        raise ValidationError("attitude_integrate: non-finite angular rate or step")
    if dt <= 0:
        raise ValidationError(f"attitude_integrate: dt must be positive, got {dt}")
    h = 0.5 * dt
    dq = np.array([1.0, omega[0] * h, omega[1] * h, omega[2] * h])
    return Attitude(quat_multiply(a.q, dq))


def wrap_angle(angle):
    """Wrap to (-pi, pi]."""
    wrapped = np.mod(np.asarray(angle, dtype=float) + np.pi, 2 * np.pi) - np.pi
    wrapped = np.where(wrapped == -np.pi, np.pi, wrapped)
    return float(wrapped) if np.ndim(wrapped) == 0 else wrapped


def yaw_of(a: Attitude, return_flag: bool = False):
    """Heading about the NED down axis, in (-pi, pi].

    With ``return_flag=True`` a ``(yaw, gimbal_degenerate)`` pair is returned;
    at pitch = +-pi/2 the yaw of the unlocked decomposition (roll taken as 0)
    is reported and the flag is set.
    """
    w, x, y, z = a.q
    sin_pitch = 2 * (w * y - z * x)
    degenerate = abs(abs(sin_pitch) - 1.0) < _GIMBAL_TOL
    if degenerate:
        # roll and yaw are not separable; attribute the whole rotation to yaw
        C = a.dcm
        yaw = math.atan2(-C[0, 1], C[1, 1])
    else:
        yaw = math.atan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))
    if yaw == -math.pi:
        yaw = math.pi
    return (yaw, degenerate) if return_flag else yaw
