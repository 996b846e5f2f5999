"""Neural-assisted inertial dead reckoning and INS/GNSS fusion on periodic trajectories."""

from mqnav.navcore import GRAVITY, Attitude, attitude_integrate, skew, yaw_of
from mqnav.mechanization import ImuSample, ImuStream, NavState, propagate_stream, strapdown_step

__all__ = [
    "GRAVITY",
    "Attitude",
    "ImuSample",
    "ImuStream",
    "NavState",
    "attitude_integrate",
    "propagate_stream",
    "skew",
    "strapdown_step",
    "yaw_of",
]

__version__ = "0.1.0"
