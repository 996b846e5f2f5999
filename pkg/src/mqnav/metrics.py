"""Position and distance error metrics."""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

from mqnav.errors import ValidationError


def align(est_t, est_p, gt_t, gt_p, tol: float | None = None) -> tuple[NDArray, NDArray, NDArray]:
    """Pair each GT sample with the nearest estimate within ``tol`` seconds.

    ``tol`` defaults to half the median GT period. Returns ``(t, est, gt)``
    for the matched GT timestamps.
    """
    est_t = np.asarray(est_t, dtype=float)
    gt_t = np.asarray(gt_t, dtype=float)
    est_p = np.asarray(est_p, dtype=float).reshape(len(est_t), -1)
    gt_p = np.asarray(gt_p, dtype=float).reshape(len(gt_t), -1)
    if len(est_t) == 0 or len(gt_t) == 0:
        raise ValidationError("cannot align empty sequences")
    if tol is None:
        tol = 0.5 * float(np.median(np.diff(gt_t))) if len(gt_t) > 1 else 1e-9
    idx = np.clip(np.searchsorted(est_t, gt_t), 1, max(len(est_t) - 1, 1))
    if len(est_t) == 1:
        nearest = np.zeros(len(gt_t), dtype=int)
    else:
        left = idx - 1
        nearest = np.where(np.abs(est_t[left] - gt_t) <= np.abs(est_t[idx] - gt_t), left, idx)
    ok = np.abs(est_t[nearest] - gt_t) <= tol + 1e-12
    if not ok.any():
        raise ValidationError("no overlap between estimate and ground truth")
    return gt_t[ok], est_p[nearest[ok]], gt_p[ok]


def _pair(est, gt):
    est = np.asarray(est, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if est.shape != gt.shape:
        raise ValidationError(f"shape mismatch {est.shape} vs {gt.shape}")
    if est.size == 0:
        raise ValidationError("empty overlap")
    return est.reshape(len(est), -1), gt.reshape(len(gt), -1)


def position_errors(est, gt) -> NDArray[np.float64]:
    est, gt = _pair(est, gt)
    return np.linalg.norm(est - gt, axis=1)


def rmse(est, gt) -> float:
    """Root mean square of the Euclidean position error."""
    e = position_errors(est, gt)
    return float(np.sqrt(np.mean(e**2)))


def max_error(est, gt) -> float:
    return float(position_errors(est, gt).max())


def drmse(d, d_hat) -> float:
    """Root mean square of scalar distance errors."""
    d = np.asarray(d, dtype=float).reshape(-1)
    d_hat = np.asarray(d_hat, dtype=float).reshape(-1)
    if d.size == 0 or d.size != d_hat.size:
        raise ValidationError("drmse needs equal, non-empty sequences")
    return float(np.sqrt(np.mean((d - d_hat) ** 2)))


def aligned_metrics(est_t, est_p, gt_t, gt_p, tol=None) -> dict:
    _, e, g = align(est_t, est_p, gt_t, gt_p, tol)
    return {"rmse": rmse(e, g), "max_error": max_error(e, g), "n": len(e)}
