"""Seeded Monte-Carlo experiment recipes.

Each recipe simulates paired runs over a list of seeds, evaluates one or
more navigation modes per run and writes ``results.csv`` (one
:class:`~mqnav.dataio.RunRecord` per run), ``summary.csv``,
``comparison.csv``, the effective ``config.json`` and figures into an
output directory. Re-running with the same configuration reproduces the
CSV files byte for byte.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.stats import binomtest

from mqnav import dataio
from mqnav.dataio import RunRecord
from mqnav.deadreck import ModelRegressor, displacement_rmse, make_windows, window_labels, windows_dataset
from mqnav.errors import ArtifactIOError, ValidationError
from mqnav.fusion import FusionConfig, RunMode, UpdateSchedule, run
from mqnav.metrics import drmse, position_errors
from mqnav.regressor import serialize
from mqnav.regressor.model import PRESETS, RegressorModel
from mqnav.regressor.training import TrainConfig, TrainHistory, WindowDataset, train
from mqnav.simgen import GnssSpec, SensorErrorSpec, SimulatedRun, TrajectorySpec, simulate_run

log = logging.getLogger(__name__)

EXPERIMENTS = ("table2", "table3", "table4", "fig8")

# independent seed streams
_EVAL, _TRAIN, _HELDOUT = 0, 1, 2

PLATFORM_DEFAULTS = {
    "quadrotor": dict(speed=3.7, duration=36.0, amplitude=1.5, period=4.0),
    "robot": dict(speed=0.6, duration=120.0, amplitude=0.4, period=6.0),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines an experiment's output.

    ``sensor`` and ``trajectory`` hold keyword overrides for
    :class:`~mqnav.simgen.SensorErrorSpec` and
    :class:`~mqnav.simgen.TrajectorySpec`.
    """

    experiment: str = "table4"
    n_seeds: int = 20
    base_seed: int = 0
    platforms: tuple[str, ...] = ("quadrotor", "robot")
    train_runs_quadrotor: int = 20
    train_runs_robot: int = 8
    heldout_runs: int = 5
    epochs: int = 15
    baseline_epochs: int = 15
    batch_size: int = 64
    lr: float = 1e-3
    window: int = 120
    gnss_sigma: float = 1.0
    outages: tuple[tuple[float, float], ...] = ()
    sensor: dict = field(default_factory=dict)
    trajectory: dict = field(default_factory=dict)
    model_dir: str | None = None
    jobs: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValidationError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if self.n_seeds < 1:
            raise ValidationError("n_seeds must be >= 1")
        if self.jobs < 1:
            raise ValidationError("jobs must be >= 1")
        for p in self.platforms:
            if p not in PLATFORM_DEFAULTS:
                raise ValidationError(f"unknown platform {p!r}")
        object.__setattr__(self, "platforms", tuple(self.platforms))
        object.__setattr__(self, "outages", tuple((float(a), float(b)) for a, b in self.outages))
        # validate overrides early
        for kind, spec in (("sensor", SensorErrorSpec), ("trajectory", TrajectorySpec)):
            try:
                spec(**getattr(self, kind))
            except TypeError as exc:
                raise ValidationError(f"bad {kind} override: {exc}") from None

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["platforms"] = list(self.platforms)
        d["outages"] = [list(o) for o in self.outages]
        return d

    def train_runs(self, platform: str) -> int:
        return self.train_runs_quadrotor if platform == "quadrotor" else self.train_runs_robot


def derive_seeds(base_seed: int, stream: int, index: int) -> tuple[int, int, int]:
    """Trajectory, sensor and GNSS seeds for run ``index`` of a seed stream."""
    ss = np.random.SeedSequence(base_seed, spawn_key=(stream, index))
    return tuple(int(c.generate_state(1)[0]) for c in ss.spawn(3))


def make_run(cfg: ExperimentConfig, platform: str, stream: int, index: int, kind: str = "pts") -> SimulatedRun:
    ts, ss, gs = derive_seeds(cfg.base_seed, stream, index)
    traj = TrajectorySpec(**{**PLATFORM_DEFAULTS[platform], **cfg.trajectory, "platform": platform, "kind": kind, "seed": ts})
    sensor = SensorErrorSpec(**{**cfg.sensor, "seed": ss})
    gnss = GnssSpec(sigma=cfg.gnss_sigma, outages=cfg.outages, seed=gs)
    return simulate_run(traj, sensor, gnss)


# ---------------------------------------------------------------- training


def training_set(cfg: ExperimentConfig, platform: str, target: str, stream: int = _TRAIN,
                 n_runs: int | None = None, stride: int | None = None) -> WindowDataset:
    n_runs = cfg.train_runs(platform) if n_runs is None else n_runs
    stride = cfg.window // 2 if stride is None else stride
    parts = []
    for i in range(n_runs):
        sim = make_run(cfg, platform, stream, i)
        parts.append(windows_dataset(sim.imu, sim.truth.t, sim.truth.p, cfg.window, stride, target))
    return WindowDataset.concat(parts)


def train_model(cfg: ExperimentConfig, platform: str, target: str = "distance", preset: str = "mini",
                data: WindowDataset | None = None, progress=None) -> tuple[RegressorModel, TrainHistory]:
    data = training_set(cfg, platform, target) if data is None else data
    model = PRESETS[preset](target=target, seed=cfg.base_seed, window=cfg.window)
    epochs = cfg.baseline_epochs if preset == "baseline" else cfg.epochs
    tc = TrainConfig(lr=cfg.lr, epochs=epochs, batch_size=cfg.batch_size, window=cfg.window, seed=cfg.base_seed)
    model, hist = train(model, data, tc, progress=progress)
    model.meta.update(platform=platform, preset=preset)
    return model, hist


def model_path(directory, platform: str, target: str) -> Path:
    return Path(directory) / f"{platform}_{target}.mqn"


def prepare_regressor(cfg: ExperimentConfig, platform: str, out_dir=None) -> tuple[ModelRegressor, dict]:
    """Load models from ``cfg.model_dir`` or train them; saves to ``out_dir/models``."""
    targets = ("distance", "altitude") if platform == "quadrotor" else ("distance",)
    models, histories = {}, {}
    for target in targets:
        if cfg.model_dir is not None:
            models[target] = serialize.load(model_path(cfg.model_dir, platform, target))
            if models[target].window != cfg.window:
                raise ValidationError(f"model window {models[target].window} != configured window {cfg.window}")
            continue
        log.info("training %s %s model", platform, target)
        models[target], histories[target] = train_model(cfg, platform, target)
        if target == "distance":
            models[target].meta["step_rmse"] = calibrate_step_rmse(cfg, platform, ModelRegressor(models[target]))
        if out_dir is not None:
            serialize.save(models[target], model_path(Path(out_dir) / "models", platform, target))
    return ModelRegressor(models["distance"], models.get("altitude")), histories


def calibrate_step_rmse(cfg: ExperimentConfig, platform: str, regressor) -> float:
    """Dead-reckoning step error on held-out runs (root mean square over all windows)."""
    sq, n = 0.0, 0
    for i in range(cfg.heldout_runs):
        sim = make_run(cfg, platform, _HELDOUT, i)
        k = len([w for w in make_windows(sim.imu, cfg.window, cfg.window) if w.t_end <= sim.truth.t[-1] + 1e-9])
        e = displacement_rmse(sim.imu, sim.truth.t, sim.truth.p, sim.truth.yaw, regressor, cfg.window)
        sq, n = sq + e**2 * k, n + k
    return float(math.sqrt(sq / n))


# ---------------------------------------------------------------- evaluation


def run_drmse(sim: SimulatedRun, regressor, window: int) -> float:
    wins = [w for w in make_windows(sim.imu, window, window) if w.t_end <= sim.truth.t[-1] + 1e-9]
    d, _ = window_labels(wins, sim.truth.t, sim.truth.p)
    d_hat, _ = regressor.regress(wins)
    return drmse(d, d_hat)


def evaluate_run(sim: SimulatedRun, mode: RunMode, regressor, cfg: ExperimentConfig, platform: str):
    """Run one mode on one simulated run; returns ``(RunResult, metrics dict)``."""
    imu = sim.imu
    fc = FusionConfig(noise=sim.sensor.noise_config(), window=cfg.window, platform=platform)
    sched = UpdateSchedule.for_mode(mode, float(imu.t[0]), float(imu.t[-1]), cfg.window / imu.rate, cfg.outages)
    res = run(imu, sim.fixes, regressor, mode, sched, sim.initial_state, fc)
    # full-rate truth; position-only outputs match at their own epochs
    m = res.metrics(sim.truth.t[: len(imu)], sim.truth.p[: len(imu)])
    return res, m


def _seed_task(args):
    cfg, platform, index, modes, kind, regressor = args
    sim = make_run(cfg, platform, _EVAL, index, kind)
    rows, traces = [], {}
    dr = run_drmse(sim, regressor, cfg.window) if regressor is not None else None
    for mode in modes:
        res, m = evaluate_run(sim, mode, regressor if mode.uses_mqn else None, cfg, platform)
        rows.append(
            RunRecord(
                run_id=f"{cfg.experiment}-{platform}-{kind}-{mode.value}-s{index:03d}",
                mode=mode.value,
                platform=platform,
                seed=index,
                rmse_m=m["rmse"],
                max_error_m=m["max_error"],
                drmse_m=dr if mode.uses_mqn else None,
                duration_s=float(sim.trajectory.duration),
                trajectory=kind,
            )
        )
        if index == 0:
            gt = sim.truth.position_at(res.t)
            traces[mode.value] = (res.t, position_errors(res.p, gt))
    return rows, traces


def _map(fn, tasks, jobs):
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, tasks))
    return [fn(t) for t in tasks]


def evaluate_modes(cfg: ExperimentConfig, platform: str, modes, regressor=None, kind: str = "pts"):
    tasks = [(cfg, platform, i, tuple(modes), kind, regressor) for i in range(cfg.n_seeds)]
    out = _map(_seed_task, tasks, cfg.jobs)
    records = [r for rows, _ in out for r in rows]
    traces = {f"{platform}-{kind}-{k}": v for _, tr in out for k, v in tr.items()}
    return records, traces


# ---------------------------------------------------------------- summaries

SUMMARY_HEADER = ("platform", "trajectory", "mode", "n", "rmse_median_m", "rmse_q25_m", "rmse_q75_m",
                  "max_error_median_m", "drmse_median_m")
COMPARISON_HEADER = ("platform", "reference", "candidate", "n", "reference_median_m", "candidate_median_m",
                     "ratio", "improvement_pct", "wins", "sign_test_p")


def _key(r: RunRecord):
    return (r.platform, r.trajectory, r.mode)


def summarize(records: list[RunRecord]) -> list[tuple]:
    groups: dict = {}
    for r in records:
        groups.setdefault(_key(r), []).append(r)
    rows = []
    for key in sorted(groups):
        g = groups[key]
        rm = np.array([r.rmse_m for r in g])
        dr = [r.drmse_m for r in g if r.drmse_m is not None]
        q25, med, q75 = np.percentile(rm, [25, 50, 75])
        rows.append((*key, len(g), float(med), float(q25), float(q75),
                     float(np.median([r.max_error_m for r in g])), float(np.median(dr)) if dr else None))
    return rows


def compare(records: list[RunRecord], platform: str, reference: tuple[str, str], candidate: tuple[str, str]) -> tuple:
    """Paired comparison of ``(trajectory, mode)`` groups on matching seeds.

    ``improvement_pct`` is the relative reduction of the median RMSE; the
    one-sided sign test counts seeds where the candidate beats the reference.
    """
    ref = {r.seed: r.rmse_m for r in records if (r.platform, r.trajectory, r.mode) == (platform, *reference)}
    cand = {r.seed: r.rmse_m for r in records if (r.platform, r.trajectory, r.mode) == (platform, *candidate)}
    seeds = sorted(set(ref) & set(cand))
    if not seeds:
        raise ValidationError(f"no paired runs for {reference} vs {candidate} on {platform}")
    a = np.array([ref[s] for s in seeds])
    b = np.array([cand[s] for s in seeds])
    wins = int(np.sum(b < a))
    ties = int(np.sum(b == a))
    n_eff = len(seeds) - ties
    p = float(binomtest(wins, n_eff, 0.5, alternative="greater").pvalue) if n_eff else 1.0
    ma, mb = float(np.median(a)), float(np.median(b))
    label = lambda tm: tm[1] if tm[0] == "pts" else f"{tm[1]}[{tm[0]}]"  # noqa: E731
    return (platform, label(reference), label(candidate), len(seeds), ma, mb, mb / ma, 100.0 * (1.0 - mb / ma), wins, p)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list[RunRecord] = field(default_factory=list)
    summary: list[tuple] = field(default_factory=list)
    comparisons: list[tuple] = field(default_factory=list)
    traces: dict = field(default_factory=dict)
    histories: dict = field(default_factory=dict)
    model_rows: list[tuple] = field(default_factory=list)
    files: list[Path] = field(default_factory=list)

    def comparison(self, platform: str, candidate: str) -> dict:
        for row in self.comparisons:
            if row[0] == platform and row[2] == candidate:
                return dict(zip(COMPARISON_HEADER, row))
        raise KeyError((platform, candidate))


# ---------------------------------------------------------------- recipes


def _table4(cfg, out_dir, result):
    modes = (RunMode.INS_ONLY, RunMode.MQN_DR, RunMode.MQN_EKF)
    for platform in cfg.platforms:
        reg, hist = prepare_regressor(cfg, platform, out_dir)
        result.histories.update({f"{platform}-{k}": h for k, h in hist.items()})
        recs, traces = evaluate_modes(cfg, platform, modes, reg)
        result.records += recs
        result.traces.update(traces)
        for m in ("MQN_DR", "MQN_EKF"):
            result.comparisons.append(compare(result.records, platform, ("pts", "INS_only"), ("pts", m)))


def _fig8(cfg, out_dir, result):
    modes = (RunMode.INS_GNSS, RunMode.INS_GNSS_MQN)
    for platform in cfg.platforms:
        reg, hist = prepare_regressor(cfg, platform, out_dir)
        result.histories.update({f"{platform}-{k}": h for k, h in hist.items()})
        recs, traces = evaluate_modes(cfg, platform, modes, reg)
        result.records += recs
        result.traces.update(traces)
        result.comparisons.append(compare(result.records, platform, ("pts", "INS_GNSS"), ("pts", "INS_GNSS_MQN")))


def _table2(cfg, out_dir, result):
    for platform in cfg.platforms:
        for kind in ("straight", "pts"):
            recs, traces = evaluate_modes(cfg, platform, (RunMode.INS_GNSS,), None, kind)
            result.records += recs
            result.traces.update(traces)
        result.comparisons.append(compare(result.records, platform, ("straight", "INS_GNSS"), ("pts", "INS_GNSS")))


MODEL_HEADER = ("platform", "preset", "n_params", "heldout_drmse_m", "val_rmse_m", "best_epoch", "epochs")


def _table3(cfg, out_dir, result):
    for platform in cfg.platforms:
        data = training_set(cfg, platform, "distance")
        held = training_set(cfg, platform, "distance", _HELDOUT, cfg.heldout_runs, stride=cfg.window)
        for preset in ("baseline", "mini"):
            model, hist = train_model(cfg, platform, "distance", preset, data)
            result.histories[f"{platform}-{preset}"] = hist
            err = drmse(held.y, model.predict(held.X))
            result.model_rows.append((platform, preset, model.n_params(), err, model.meta["val_rmse"],
                                      hist.best_epoch, len(hist.train_loss)))
            if out_dir is not None:
                serialize.save(model, Path(out_dir) / "models" / f"{platform}_{preset}.mqn")


RECIPES: dict[str, Callable] = {"table2": _table2, "table3": _table3, "table4": _table4, "fig8": _fig8}


def run_experiment(cfg: ExperimentConfig, out_dir=None, figures: bool = True) -> ExperimentResult:
    """Run the recipe named by ``cfg.experiment`` and write its artifacts to ``out_dir``."""
    result = ExperimentResult(cfg)
    if out_dir is not None:
        out_dir = Path(out_dir)
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ArtifactIOError(f"cannot create {out_dir}: {exc}") from exc
        write_config(out_dir / "config.json", cfg)
    RECIPES[cfg.experiment](cfg, out_dir, result)
    result.records.sort(key=lambda r: r.run_id)
    result.summary = summarize(result.records) if result.records else []
    if out_dir is not None:
        result.files += write_outputs(result, out_dir)
        if figures:
            from mqnav import plotting

            result.files += plotting.experiment_figures(result, out_dir / "figures")
    return result


def write_config(path, cfg: ExperimentConfig):
    text = json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc}") from exc
    return Path(path)


def write_outputs(result: ExperimentResult, out_dir: Path) -> list[Path]:
    files = []
    if result.records:
        files.append(dataio.write_results_csv(out_dir / "results.csv", result.records))
        files.append(dataio.write_table_csv(out_dir / "summary.csv", SUMMARY_HEADER, result.summary))
    if result.comparisons:
        files.append(dataio.write_table_csv(out_dir / "comparison.csv", COMPARISON_HEADER, result.comparisons))
    if result.model_rows:
        files.append(dataio.write_table_csv(out_dir / "models.csv", MODEL_HEADER, result.model_rows))
    for name, (t, err) in sorted(result.traces.items()):
        files.append(dataio.write_plot_csv(out_dir / "traces" / f"{name}.csv", t, err))
    for name, hist in sorted(result.histories.items()):
        files.append(dataio.write_table_csv(out_dir / "training" / f"{name}.csv",
                                            ("epoch", "train_loss", "val_loss", "lr"), hist.rows()))
    return files
