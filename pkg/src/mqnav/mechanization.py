"""Strapdown INS propagation in a flat-earth NED frame."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Sequence

import numpy as np
from numpy.typing import NDArray

from mqnav.errors import StreamGapError, StreamOrderError, ValidationError
from mqnav.navcore import GRAVITY, GRAVITY_NED, Attitude, attitude_integrate, yaw_of

MAX_STEP = 0.1


@dataclass(frozen=True)
class ImuSample:
    """One IMU record: specific force ``f`` [m/s^2] and angular rate ``w`` [rad/s], body frame."""

    t: float
    f: NDArray[np.float64]
    w: NDArray[np.float64]


@dataclass(eq=False)
class ImuStream:
    """Column-oriented IMU stream; ``t`` is (N,), ``f`` and ``w`` are (N, 3)."""

    t: NDArray[np.float64]
    f: NDArray[np.float64]
    w: NDArray[np.float64]

    def __post_init__(self):
        self.t = np.ascontiguousarray(self.t, dtype=float).reshape(-1)
        self.f = np.ascontiguousarray(self.f, dtype=float).reshape(-1, 3)
        self.w = np.ascontiguousarray(self.w, dtype=float).reshape(-1, 3)
        if not (len(self.t) == len(self.f) == len(self.w)):
            raise ValidationError("ImuStream columns have different lengths")

    @classmethod
    def from_samples(cls, samples: Iterable[ImuSample]) -> ImuStream:
        samples = list(samples)
        return cls(
            np.array([s.t for s in samples]),
            np.array([s.f for s in samples]),
            np.array([s.w for s in samples]),
        )

    def __len__(self):
        return len(self.t)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return ImuStream(self.t[idx], self.f[idx], self.w[idx])
        return ImuSample(float(self.t[idx]), self.f[idx].copy(), self.w[idx].copy())

    def __iter__(self) -> Iterator[ImuSample]:
        for i in range(len(self)):
            yield self[i]

    @property
    def rate(self) -> float:
        """Sample rate inferred from the median step."""
        return 1.0 / float(np.median(np.diff(self.t)))

    def as_array(self) -> NDArray[np.float64]:
        return np.column_stack([self.t, self.f, self.w])

    def check_monotone(self):
        dt = np.diff(self.t)
        bad = np.flatnonzero(~(dt > 0))
        if bad.size:
            i = int(bad[0])
            raise StreamOrderError(
                f"timestamps not strictly increasing at index {i + 1}: "
                f"{self.t[i]!r} -> {self.t[i + 1]!r}"
            )


@dataclass(frozen=True, eq=False)
class NavState:
    t: float
    p: NDArray[np.float64]
    v: NDArray[np.float64]
    att: Attitude = field(default_factory=Attitude.identity)

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(3))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float).reshape(3))

    @property
    def yaw(self) -> float:
        return yaw_of(self.att)

    def at_time(self, t: float) -> NavState:
        return replace(self, t=float(t))


def _check_step(t: float, dt: float):
    if not (math.isfinite(dt) and 0.0 < dt <= MAX_STEP):
        raise StreamGapError(t, t + dt, f"strapdown step dt={dt!r} outside (0, {MAX_STEP}] at t={t!r}")


def strapdown_step(s: NavState, imu: ImuSample, dt: float) -> NavState:
    """Advance ``s`` by one IMU sample held over ``dt``.

    Velocity uses the pre-update attitude (Euler); position adds the
    ``0.5 * a * dt**2`` term so it is exact for the held acceleration.
    """
    _check_step(s.t, dt)
    f = np.asarray(imu.f, dtype=float)
    a = s.att.dcm @ f + GRAVITY_NED
    att = attitude_integrate(s.att, imu.w, dt)
    v = s.v + a * dt
    p = s.p + s.v * dt + 0.5 * a * dt * dt
    return NavState(s.t + dt, p, v, att)


def propagate_stream(s0: NavState, stream: ImuStream | Sequence[ImuSample]) -> list[NavState]:
    """Fold :func:`strapdown_step` over a stream.

    State ``k`` is the result of holding sample ``k-1`` over ``t[k] - t[k-1]``;
    state 0 is ``s0`` stamped with the first sample time.
    """
    if not isinstance(stream, ImuStream):
        stream = ImuStream.from_samples(stream)
    if len(stream) == 0:
        raise ValidationError("propagate_stream: empty stream")
    stream.check_monotone()
    states = [s0.at_time(stream.t[0])]
    s = states[0]
    for k in range(1, len(stream)):
        dt = float(stream.t[k] - stream.t[k - 1])
        try:
            s = strapdown_step(s, stream[k - 1], dt)
        except StreamGapError:
            raise StreamGapError(float(stream.t[k - 1]), float(stream.t[k])) from None
        # pin to the sample clock so rounding in t + dt never accumulates
        s = s.at_time(stream.t[k])
        states.append(s)
    return states


def states_to_arrays(states: Sequence[NavState]):
    """Stack a state sequence into ``(t, p, v, q)`` arrays."""
    t = np.array([s.t for s in states])
    p = np.array([s.p for s in states])
    v = np.array([s.v for s in states])
    q = np.array([s.att.q for s in states])
    return t, p, v, q


__all__ = [
    "GRAVITY",
    "ImuSample",
    "ImuStream",
    "NavState",
    "propagate_stream",
    "states_to_arrays",
    "strapdown_step",
]
