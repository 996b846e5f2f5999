"""CSV schemas for IMU, ground truth, position fixes and run results.

All files are UTF-8 with a header row; lines starting with ``#`` are
comments. Floats are written with ``repr`` so they read back exactly.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import NDArray

from mqnav.errors import ArtifactIOError, ParseError, StreamOrderError, ValidationError
from mqnav.eskf import PositionFix, Source
from mqnav.mechanization import ImuStream

log = logging.getLogger(__name__)

IMU_HEADER = ("t_s", "fx_mps2", "fy_mps2", "fz_mps2", "wx_rps", "wy_rps", "wz_rps")
GT_HEADER = ("t_s", "x_m", "y_m", "z_m")
GT_HEADER_YAW = GT_HEADER + ("yaw_rad",)
FIX_HEADER = ("t_s", "x_m", "y_m", "z_m", "sigma_m")
PLOT_HEADER = ("t_s", "error_m")

GAP_FACTOR = 3.0


@dataclass(frozen=True)
class GroundTruth:
    t: NDArray[np.float64]
    p: NDArray[np.float64]
    yaw: NDArray[np.float64] | None = None


@dataclass(frozen=True)
class IngestReport:
    rows: int
    rate_hz: float
    gaps: tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class RunRecord:
    run_id: str
    mode: str
    platform: str
    seed: int
    rmse_m: float
    max_error_m: float
    drmse_m: float | None
    duration_s: float
    trajectory: str = "pts"

    def __post_init__(self):
        for name in ("rmse_m", "max_error_m", "drmse_m", "duration_s"):
            value = getattr(self, name)
            if value is not None and not value >= 0:
                raise ValidationError(f"RunRecord.{name} must be non-negative, got {value}")


RUN_HEADER = tuple(f.name for f in fields(RunRecord))


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_rows(path, header: Sequence[str], rows: Iterable[Sequence], comments: Sequence[str] = ()):
    path = Path(path)
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_text(buf.getvalue(), encoding="utf-8")
        os.replace(tmp, path)
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc}") from exc
    return path


def _read_rows(path, accepted_headers: Sequence[Sequence[str]]):
    """Yield ``(header, line_number, row)``; validates the header and field counts."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ArtifactIOError(f"cannot read {path}: {exc}") from exc
    header = None
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields_ = [f.strip() for f in next(csv.reader([stripped]))]
        if header is None:
            if tuple(fields_) not in [tuple(h) for h in accepted_headers]:
                raise ParseError(path, lineno, f"unexpected header {fields_}; expected one of {accepted_headers}")
            header = tuple(fields_)
            continue
        if len(fields_) != len(header):
            raise ParseError(path, lineno, f"expected {len(header)} fields, found {len(fields_)}")
        try:
            values = [float(v) for v in fields_]
        except ValueError:
            raise ParseError(path, lineno, f"non-numeric field in {fields_}") from None
        if not all(math.isfinite(v) for v in values):
            raise ParseError(path, lineno, "non-finite value")
        rows.append((lineno, values))
    if header is None:
        raise ParseError(path, 1, "missing header")
    return header, rows


def _check_time(path, rows):
    for (ln_prev, prev), (ln, cur) in zip(rows, rows[1:]):
        if not cur[0] > prev[0]:
            raise StreamOrderError(f"{path}:{ln}: time {cur[0]!r} does not increase (previous {prev[0]!r})")


def _gap_report(t: NDArray) -> IngestReport:
    if len(t) < 2:
        return IngestReport(len(t), float("nan"), ())
    dt = np.diff(t)
    period = float(np.median(dt))
    gaps = tuple((float(t[i]), float(t[i + 1])) for i in np.flatnonzero(dt > GAP_FACTOR * period))
    for a, b in gaps:
        log.warning("gap of %.3f s between t=%.6f and t=%.6f", b - a, a, b)
    return IngestReport(len(t), 1.0 / period, gaps)


def write_imu_csv(path, stream: ImuStream, comments=()):
    return _write_rows(path, IMU_HEADER, stream.as_array().tolist(), comments)


def ingest_imu_csv(path, return_report: bool = False):
    _, rows = _read_rows(path, [IMU_HEADER])
    if not rows:
        raise ParseError(path, 1, "no data rows")
    _check_time(path, rows)
    a = np.array([r for _, r in rows])
    stream = ImuStream(a[:, 0], a[:, 1:4], a[:, 4:7])
    report = _gap_report(stream.t)
    return (stream, report) if return_report else stream


def write_gt_csv(path, t, p, yaw=None, comments=()):
    t = np.asarray(t, dtype=float)
    p = np.asarray(p, dtype=float)
    if yaw is None:
        return _write_rows(path, GT_HEADER, np.column_stack([t, p]).tolist(), comments)
    return _write_rows(path, GT_HEADER_YAW, np.column_stack([t, p, yaw]).tolist(), comments)


def ingest_gt_csv(path, return_report: bool = False):
    header, rows = _read_rows(path, [GT_HEADER, GT_HEADER_YAW])
    if not rows:
        raise ParseError(path, 1, "no data rows")
    _check_time(path, rows)
    a = np.array([r for _, r in rows])
    gt = GroundTruth(a[:, 0], a[:, 1:4], a[:, 4] if len(header) == 5 else None)
    report = _gap_report(gt.t)
    return (gt, report) if return_report else gt


def write_fixes_csv(path, fixes: Sequence[PositionFix], comments=()):
    rows = [(f.t, *f.z, math.sqrt(float(np.mean(np.diag(f.R))))) for f in fixes]
    return _write_rows(path, FIX_HEADER, rows, comments)


def ingest_fixes_csv(path, source: Source = Source.GNSS) -> list[PositionFix]:
    _, rows = _read_rows(path, [FIX_HEADER])
    _check_time(path, rows)
    fixes = []
    for ln, r in rows:
        if r[4] < 0:
            raise ParseError(path, ln, "sigma_m must be non-negative")
        fixes.append(PositionFix(r[0], r[1:4], np.eye(3) * r[4] ** 2, source))
    return fixes


def write_results_csv(path, records: Sequence[RunRecord]):
    return _write_rows(path, RUN_HEADER, [[getattr(r, k) for k in RUN_HEADER] for r in records])


def read_results_csv(path) -> list[RunRecord]:
    path = Path(path)
    try:
        reader = csv.DictReader(line for line in path.read_text(encoding="utf-8").splitlines() if not line.startswith("#"))
    except OSError as exc:
        raise ArtifactIOError(f"cannot read {path}: {exc}") from exc
    out = []
    for row in reader:
        out.append(
            RunRecord(
                row["run_id"],
                row["mode"],
                row["platform"],
                int(row["seed"]),
                float(row["rmse_m"]),
                float(row["max_error_m"]),
                float(row["drmse_m"]) if row["drmse_m"] else None,
                float(row["duration_s"]),
                row.get("trajectory", "pts"),
            )
        )
    return out


def write_table_csv(path, header: Sequence[str], rows: Iterable[Sequence], comments=()):
    """Write any table with the package's float formatting (empty cell for ``None``)."""
    return _write_rows(path, header, rows, comments)


def write_plot_csv(path, t, error):
    return _write_rows(path, PLOT_HEADER, np.column_stack([t, error]).tolist())


MOVELLA_TIME = "SampleTimeFine"
MOVELLA_ACC = ("Acc_X", "Acc_Y", "Acc_Z")
MOVELLA_GYR = ("Gyr_X", "Gyr_Y", "Gyr_Z")


def ingest_movella_csv(path, body_frame: str = "flu") -> ImuStream:
    """Read a Movella DOT CSV export (``SampleTimeFine`` in us, Acc in m/s^2, Gyr in deg/s).

    The sensor reports in a forward-left-up frame; with ``body_frame="flu"``
    the axes are flipped to the forward-right-down frame used here.
    Preamble lines before the header are skipped; the 32-bit microsecond
    counter is unwrapped.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8-sig").splitlines()
    except OSError as exc:
        raise ArtifactIOError(f"cannot read {path}: {exc}") from exc
    start = next((i for i, ln in enumerate(lines) if MOVELLA_TIME in ln), None)
    if start is None:
        raise ParseError(path, 1, f"no header containing {MOVELLA_TIME}")
    header = [h.strip() for h in next(csv.reader([lines[start]]))]
    missing = [c for c in (MOVELLA_TIME, *MOVELLA_ACC, *MOVELLA_GYR) if c not in header]
    if missing:
        raise ParseError(path, start + 1, f"missing columns {missing}")
    cols = [header.index(c) for c in (MOVELLA_TIME, *MOVELLA_ACC, *MOVELLA_GYR)]
    data = []
    for lineno, line in enumerate(lines[start + 1 :], start=start + 2):
        if not line.strip() or line.startswith("#"):
            continue
        fields_ = next(csv.reader([line]))
        if len(fields_) != len(header):
            raise ParseError(path, lineno, f"expected {len(header)} fields, found {len(fields_)}")
        try:
            data.append([float(fields_[c]) for c in cols])
        except ValueError:
            raise ParseError(path, lineno, "non-numeric sensor field") from None
    if not data:
        raise ParseError(path, start + 1, "no data rows")
    a = np.array(data)
    ticks = np.concatenate([[0.0], np.cumsum(np.mod(np.diff(a[:, 0]), 2.0**32))])
    t = ticks * 1e-6
    f = a[:, 1:4]
    w = np.radians(a[:, 4:7])
    if body_frame == "flu":
        flip = np.array([1.0, -1.0, -1.0])
        f, w = f * flip, w * flip
    elif body_frame != "frd":
        raise ValidationError(f"body_frame must be 'flu' or 'frd', got {body_frame!r}")
    stream = ImuStream(t, f, w)
    stream.check_monotone()
    _gap_report(t)
    return stream
