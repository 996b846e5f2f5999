"""Matplotlib figures for experiment reports (Agg backend, PNG files)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from mqnav.errors import ArtifactIOError  # noqa: E402

DPI = 120


def _save(fig, path: Path) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, dpi=DPI, metadata={"Software": None})
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc}") from exc
    finally:
        plt.close(fig)
    return path


def rmse_boxplot(records, path, title: str = "") -> Path:
    """One panel per platform, one box per (trajectory, mode) group."""
    platforms = sorted({r.platform for r in records})
    fig, axes = plt.subplots(1, len(platforms), figsize=(5 * len(platforms), 4), squeeze=False)
    for ax, platform in zip(axes[0], platforms):
        groups: dict = {}
        for r in records:
            if r.platform == platform:
                label = r.mode if r.trajectory == "pts" else f"{r.mode}\n[{r.trajectory}]"
                groups.setdefault(label, []).append(r.rmse_m)
        labels = list(groups)
        ax.boxplot([groups[k] for k in labels])
        ax.set_xticks(range(1, len(labels) + 1), labels)
        ax.set_yscale("log")
        ax.set_ylabel("position RMSE [m]")
        ax.set_title(platform)
        ax.grid(True, which="both", alpha=0.3)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return _save(fig, Path(path))


def error_traces(traces: dict, path, title: str = "") -> Path:
    """Position error against time for each named trace ``(t, err)``."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for name, (t, err) in sorted(traces.items()):
        ax.plot(t, err, label=name, marker="." if len(t) < 200 else None)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("position error [m]")
    if any(np.max(e) > 50 * max(np.median(e), 1e-9) for _, e in traces.values()):
        ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, Path(path))


def training_curves(histories: dict, path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    for name, h in sorted(histories.items()):
        line = ax.plot(h.train_loss, label=f"{name} train")[0]
        ax.plot(h.val_loss, "--", color=line.get_color(), label=f"{name} val")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE [m^2]")
    ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, Path(path))


def model_comparison(rows, path) -> Path:
    """Held-out DRMSE and parameter count per (platform, preset)."""
    labels = [f"{r[0]}\n{r[1]}" for r in rows]
    fig, (a, b) = plt.subplots(1, 2, figsize=(9, 4))
    a.bar(labels, [r[3] for r in rows], color="tab:blue")
    a.set_ylabel("held-out DRMSE [m]")
    b.bar(labels, [r[2] for r in rows], color="tab:gray")
    b.set_yscale("log")
    b.set_ylabel("parameters")
    for ax in (a, b):
        ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    return _save(fig, Path(path))


def experiment_figures(result, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    name = result.config.experiment
    files = []
    if result.records:
        files.append(rmse_boxplot(result.records, out_dir / f"{name}_rmse.png", name))
    if result.traces:
        files.append(error_traces(result.traces, out_dir / f"{name}_errors_seed0.png", f"{name}, seed 0"))
    if result.histories:
        files.append(training_curves(result.histories, out_dir / f"{name}_training.png"))
    if result.model_rows:
        files.append(model_comparison(result.model_rows, out_dir / f"{name}_models.png"))
    return files


def trajectory_plot(t, est, gt, path, labels=("estimate", "truth")) -> Path:
    """North-east plan view of an estimate against ground truth."""
    fig, ax = plt.subplots(figsize=(6, 5))
    ax.plot(gt[:, 1], gt[:, 0], "k-", lw=1, label=labels[1])
    ax.plot(est[:, 1], est[:, 0], "-", lw=1, label=labels[0])
    ax.set_xlabel("east [m]")
    ax.set_ylabel("north [m]")
    ax.axis("equal")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    return _save(fig, Path(path))
