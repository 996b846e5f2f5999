"""Command-line interface.

Subcommands: ``simulate``, ``train``, ``evaluate``, ``fuse`` and
``experiment``. Options may come from a JSON file (``--spec``); explicit
flags override it. Every output directory receives the effective
configuration as ``config.json``.

Exit codes: 0 success, 2 invalid input, 3 filter or training divergence,
4 file-system error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from mqnav import dataio
from mqnav.errors import ArtifactIOError, MqnavError, ValidationError

log = logging.getLogger("mqnav")

PLATFORMS = ("quadrotor", "robot")


def parse_outage(text: str) -> tuple[float, float]:
    try:
        a, b = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"outage must look like START:END, got {text!r}") from None
    if b < a:
        raise argparse.ArgumentTypeError(f"outage {text!r} ends before it starts")
    return a, b


def load_spec(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ArtifactIOError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: top level must be an object")
    return data


def merge(spec: dict, args: argparse.Namespace, keys) -> dict:
    """Config from ``spec`` with every explicitly given flag in ``keys`` on top."""
    out = dict(spec)
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


def write_json(path, obj):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc}") from exc
    return path


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


# ---------------------------------------------------------------- simulate


def cmd_simulate(args) -> int:
    from mqnav.experiments import ExperimentConfig, make_run

    cfg = merge(load_spec(args.spec), args, ("platform", "kind", "seed", "duration", "gnss_outage"))
    platform = cfg.get("platform", "quadrotor")
    if platform not in PLATFORMS:
        raise ValidationError(f"unknown platform {platform!r}")
    seed = int(cfg.get("seed", 0))
    trajectory = dict(cfg.get("trajectory", {}))
    if "duration" in cfg:
        trajectory["duration"] = float(cfg["duration"])
    ec = ExperimentConfig(base_seed=seed, platforms=(platform,), gnss_sigma=float(cfg.get("gnss_sigma", 1.0)),
                          outages=tuple(tuple(o) for o in cfg.get("gnss_outage", [])),
                          sensor=dict(cfg.get("sensor", {})), trajectory=trajectory)
    sim = make_run(ec, platform, 0, 0, cfg.get("kind", "pts"))
    out = Path(args.out)
    dataio.write_imu_csv(out / "imu.csv", sim.imu)
    dataio.write_gt_csv(out / "truth.csv", sim.truth.t, sim.truth.p, sim.truth.yaw)
    dataio.write_fixes_csv(out / "fixes.csv", sim.fixes)
    s0 = sim.initial_state
    write_json(out / "initial.json", {"t": s0.t, "p": s0.p, "v": s0.v, "q": s0.att.q})
    effective = {**cfg, "platform": platform, "seed": seed, "trajectory": sim.trajectory.to_dict(),
                 "sensor": sim.sensor.to_dict(), "gnss": sim.gnss.to_dict()}
    write_json(out / "config.json", effective)
    print(f"wrote {len(sim.imu)} IMU samples, {len(sim.fixes)} fixes to {out}")
    return 0


# ---------------------------------------------------------------- data helpers


def load_run_dir(path, imu_format: str = "csv"):
    """IMU stream, ground truth (or None), fixes and initial state from a run directory."""
    from mqnav.mechanization import NavState
    from mqnav.navcore import Attitude

    d = Path(path)
    if imu_format == "movella":
        stream = dataio.ingest_movella_csv(d if d.is_file() else d / "imu.csv")
        d = d.parent if d.is_file() else d
    else:
        stream = dataio.ingest_imu_csv(d / "imu.csv")
    gt = dataio.ingest_gt_csv(d / "truth.csv") if (d / "truth.csv").exists() else None
    fixes = dataio.ingest_fixes_csv(d / "fixes.csv") if (d / "fixes.csv").exists() else []
    init_path = d / "initial.json"
    if init_path.exists():
        init = load_spec(init_path)
        initial = NavState(float(init["t"]), np.array(init["p"]), np.array(init["v"]), Attitude(np.array(init["q"])))
    elif gt is not None:
        v = (gt.p[1] - gt.p[0]) / (gt.t[1] - gt.t[0])
        att = Attitude.from_yaw(float(gt.yaw[0])) if gt.yaw is not None else Attitude.identity()
        initial = NavState(float(stream.t[0]), gt.p[0].copy(), v, att)
    else:
        initial = NavState(float(stream.t[0]), np.zeros(3), np.zeros(3), Attitude.identity())
    return stream, gt, fixes, initial


# ---------------------------------------------------------------- train / evaluate


def cmd_train(args) -> int:
    from mqnav.deadreck import windows_dataset
    from mqnav.experiments import ExperimentConfig, training_set
    from mqnav.regressor import serialize
    from mqnav.regressor.model import PRESETS
    from mqnav.regressor.training import TrainConfig, WindowDataset, train

    cfg = merge(load_spec(args.spec), args, ("platform", "target", "preset", "runs", "epochs", "seed", "window",
                                             "batch_size", "lr"))
    platform = cfg.get("platform", "quadrotor")
    target = cfg.get("target", "distance")
    preset = cfg.get("preset", "mini")
    if preset not in PRESETS:
        raise ValidationError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    window = int(cfg.get("window", 120))
    seed = int(cfg.get("seed", 0))
    if args.data:
        parts = []
        for d in args.data:
            stream, gt, _, _ = load_run_dir(d)
            if gt is None:
                raise ValidationError(f"{d}: training needs truth.csv")
            parts.append(windows_dataset(stream, gt.t, gt.p, window, window // 2, target))
        data = WindowDataset.concat(parts)
    else:
        ec = ExperimentConfig(base_seed=seed, window=window, platforms=(platform,),
                              train_runs_quadrotor=int(cfg.get("runs", 20)), train_runs_robot=int(cfg.get("runs", 8)))
        data = training_set(ec, platform, target)
    model = PRESETS[preset](target=target, seed=seed, window=window)
    tc = TrainConfig(lr=float(cfg.get("lr", 1e-3)), epochs=int(cfg.get("epochs", 15)),
                     batch_size=int(cfg.get("batch_size", 64)), window=window, seed=seed)

    def progress(epoch, tl, vl):
        log.info("epoch %d  train %.5g  val %.5g", epoch, tl, vl)

    model, hist = train(model, data, tc, progress=progress)
    model.meta.update(platform=platform, preset=preset)
    out = Path(args.out)
    serialize.save(model, out)
    dataio.write_table_csv(out.with_suffix(".history.csv"), ("epoch", "train_loss", "val_loss", "lr"), hist.rows())
    write_json(out.with_suffix(".config.json"), {**cfg, "platform": platform, "target": target, "preset": preset,
                                                 "window": window, "seed": seed, "n_windows": len(data),
                                                 "train": tc.to_dict()})
    print(f"{preset} {target} model: {model.n_params()} parameters, val RMSE {model.meta['val_rmse']:.4f} m -> {out}")
    return 0


def cmd_evaluate(args) -> int:
    from mqnav.deadreck import make_windows, window_labels
    from mqnav.metrics import drmse
    from mqnav.regressor import serialize

    model = serialize.load(args.model)
    rows = []
    for d in args.data:
        stream, gt, _, _ = load_run_dir(d)
        if gt is None:
            raise ValidationError(f"{d}: evaluation needs truth.csv")
        wins = [w for w in make_windows(stream, model.window, model.window) if w.t_end <= gt.t[-1] + 1e-9]
        if not wins:
            raise ValidationError(f"{d}: no complete windows")
        d_true, dh_true = window_labels(wins, gt.t, gt.p)
        y = d_true if model.target == "distance" else dh_true
        rows.append((str(d), len(wins), drmse(y, model.predict(np.stack([w.tensor for w in wins])))))
    for name, n, e in rows:
        print(f"{name}: {n} windows, DRMSE {e:.4f} m")
    if args.out:
        out = Path(args.out)
        dataio.write_table_csv(out / "evaluation.csv", ("data", "windows", "drmse_m"), rows)
        write_json(out / "config.json", {"model": str(args.model), "data": [str(d) for d in args.data]})
    return 0


# ---------------------------------------------------------------- fuse


def cmd_fuse(args) -> int:
    from mqnav import plotting
    from mqnav.deadreck import ModelRegressor
    from mqnav.fusion import FusionConfig, RunMode, UpdateSchedule, run
    from mqnav.regressor import serialize
    from mqnav.simgen import SensorErrorSpec

    cfg = merge(load_spec(args.spec), args, ("mode", "platform", "model", "altitude_model", "gnss_outage",
                                             "imu_format", "open_loop"))
    mode = RunMode(cfg.get("mode", "INS_GNSS_MQN"))
    platform = cfg.get("platform", "quadrotor")
    stream, gt, fixes, initial = load_run_dir(args.data, cfg.get("imu_format", "csv"))
    regressor = None
    if mode.uses_mqn:
        if not cfg.get("model"):
            raise ValidationError(f"mode {mode.value} needs --model")
        alt = serialize.load(cfg["altitude_model"]) if cfg.get("altitude_model") else None
        regressor = ModelRegressor(serialize.load(cfg["model"]), alt)
        window = regressor.distance.window
    else:
        window = 120
    outages = [tuple(o) for o in cfg.get("gnss_outage", [])]
    sched = UpdateSchedule.for_mode(mode, float(stream.t[0]), float(stream.t[-1]), window / stream.rate, outages)
    fc = FusionConfig(noise=SensorErrorSpec(**cfg.get("sensor", {})).noise_config(), window=window,
                      platform=platform, reanchor=not cfg.get("open_loop", False))
    res = run(stream, fixes, regressor, mode, sched, initial, fc)

    out = Path(args.out)
    dataio.write_table_csv(out / "trajectory.csv", ("t_s", "x_m", "y_m", "z_m"), np.column_stack([res.t, res.p]).tolist())
    dataio.write_table_csv(
        out / "innovations.csv",
        ("t_s", "source", "rx_m", "ry_m", "rz_m", "sx_m2", "sy_m2", "sz_m2"),
        [(i["t"], i["source"], *i["innovation"], *i["S_diag"]) for i in res.innovations],
    )
    summary = {"mode": mode.value, "platform": platform, "updates": len(res.innovations), "rejected": res.rejected}
    if gt is not None:
        m = res.metrics(gt.t, gt.p)
        rec = dataio.RunRecord(Path(args.data).name, mode.value, platform, int(cfg.get("seed", 0)), m["rmse"],
                               m["max_error"], None, float(stream.t[-1] - stream.t[0]))
        dataio.write_results_csv(out / "results.csv", [rec])
        gt_at = np.column_stack([np.interp(res.t, gt.t, gt.p[:, i]) for i in range(3)])
        plotting.trajectory_plot(res.t, res.p, gt_at, out / "trajectory.png", (mode.value, "truth"))
        plotting.error_traces({mode.value: (res.t, np.linalg.norm(res.p - gt_at, axis=1))}, out / "error.png")
        summary.update(rmse_m=m["rmse"], max_error_m=m["max_error"])
        print(f"{mode.value}: RMSE {m['rmse']:.3f} m, max {m['max_error']:.3f} m")
    write_json(out / "config.json", {**cfg, "mode": mode.value, "platform": platform, "data": str(args.data),
                                     "window": window, "summary": summary})
    for w in res.warnings:
        log.warning("%s", w)
    return 0


# ---------------------------------------------------------------- experiment


def cmd_experiment(args) -> int:
    from mqnav.experiments import ExperimentConfig, run_experiment

    cfg = load_spec(args.spec)
    cfg["experiment"] = args.name
    if args.seeds is not None:
        cfg["n_seeds"] = args.seeds
    if args.seed is not None:
        cfg["base_seed"] = args.seed
    for key in ("jobs", "epochs", "model_dir"):
        if getattr(args, key) is not None:
            cfg[key] = getattr(args, key)
    if args.platform:
        cfg["platforms"] = [args.platform]
    if args.gnss_outage:
        cfg["outages"] = args.gnss_outage
    ec = ExperimentConfig.from_dict(cfg)
    res = run_experiment(ec, args.out, figures=not args.no_figures)
    for row in res.comparisons:
        print(f"{row[0]:9s} {row[1]:>20s} -> {row[2]:<14s} median {row[4]:.3f} -> {row[5]:.3f} m "
              f"({row[7]:+.1f}%), wins {row[8]}/{row[3]}, sign-test p={row[9]:.2g}")
    for row in res.model_rows:
        print(f"{row[0]:9s} {row[1]:9s} params {row[2]:>10d}  held-out DRMSE {row[3]:.4f} m")
    print(f"results in {args.out}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mqnav", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="synthesize one run (IMU, truth, GNSS fixes)")
    s.add_argument("--spec")
    s.add_argument("--platform", choices=PLATFORMS)
    s.add_argument("--kind", choices=("pts", "straight"))
    s.add_argument("--seed", type=int)
    s.add_argument("--duration", type=float)
    s.add_argument("--gnss-outage", type=parse_outage, action="append", dest="gnss_outage")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="train a distance or altitude regressor")
    t.add_argument("--spec")
    t.add_argument("--platform", choices=PLATFORMS)
    t.add_argument("--target", choices=("distance", "altitude"))
    t.add_argument("--preset", choices=("mini", "baseline"))
    t.add_argument("--data", action="append", help="run directory with imu.csv and truth.csv (repeatable)")
    t.add_argument("--runs", type=int, help="simulated training runs when --data is absent")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int, dest="batch_size")
    t.add_argument("--lr", type=float)
    t.add_argument("--window", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True, help="model file")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="DRMSE of a model on run directories")
    e.add_argument("--model", required=True)
    e.add_argument("--data", action="append", required=True)
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    f = sub.add_parser("fuse", help="run one navigation mode on a run directory")
    f.add_argument("--spec")
    f.add_argument("--data", required=True)
    f.add_argument("--mode", choices=("INS_only", "INS_GNSS", "MQN_DR", "MQN_EKF", "INS_GNSS_MQN"))
    f.add_argument("--platform", choices=PLATFORMS)
    f.add_argument("--model")
    f.add_argument("--altitude-model", dest="altitude_model")
    f.add_argument("--imu-format", choices=("csv", "movella"), dest="imu_format")
    f.add_argument("--open-loop", action="store_const", const=True, dest="open_loop",
                   help="never re-anchor the dead-reckoning chain")
    f.add_argument("--gnss-outage", type=parse_outage, action="append", dest="gnss_outage")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fuse)

    x = sub.add_parser("experiment", help="run a seeded Monte-Carlo experiment")
    x.add_argument("name", choices=("table2", "table3", "table4", "fig8"))
    x.add_argument("--spec")
    x.add_argument("--seeds", type=int, help="number of seeds")
    x.add_argument("--seed", type=int, help="base seed")
    x.add_argument("--jobs", type=int)
    x.add_argument("--epochs", type=int)
    x.add_argument("--platform", choices=PLATFORMS)
    x.add_argument("--model-dir", dest="model_dir")
    x.add_argument("--gnss-outage", type=parse_outage, action="append", dest="gnss_outage")
    x.add_argument("--no-figures", action="store_true")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except MqnavError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ArtifactIOError.exit_code


if __name__ == "__main__":
    sys.exit(main())
