"""Ground-truth stand-in for the learned regressor."""

from __future__ import annotations

import numpy as np

from mqnav.errors import ValidationError


def oracle_regressor(positions) -> tuple[float, float]:
    """``(d, dh)`` for a window of GT positions (K, 3), K >= 2.

    ``d`` is the summed horizontal polyline length, ``dh`` the change of the
    vertical coordinate from first to last point.
    """
    p = np.asarray(positions, dtype=float)
    if p.ndim != 2 or p.shape[0] < 2 or p.shape[1] < 3:
        raise ValidationError("oracle_regressor needs at least two 3-D positions")
    d = float(np.sum(np.hypot(np.diff(p[:, 0]), np.diff(p[:, 1]))))
    return d, float(p[-1, 2] - p[0, 2])
