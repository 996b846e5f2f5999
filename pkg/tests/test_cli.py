import json

import numpy as np
import pytest

from mqnav import dataio
from mqnav.cli import main, parse_outage


def sim(tmp_path, name="run", *extra):
    out = tmp_path / name
    assert main(["simulate", "--duration", "6", "--seed", "5", "--out", str(out), *extra]) == 0
    return out


def test_simulate_writes_files_with_expected_rows(tmp_path):
    out = sim(tmp_path)
    for f in ("imu.csv", "truth.csv", "fixes.csv", "initial.json", "config.json"):
        assert (out / f).exists()
    assert len(dataio.ingest_imu_csv(out / "imu.csv").t) == 6 * 120 + 1
    assert len(dataio.ingest_fixes_csv(out / "fixes.csv")) == 6


def test_simulate_same_seed_byte_identical(tmp_path):
    a, b = sim(tmp_path, "a"), sim(tmp_path, "b")
    for f in ("imu.csv", "truth.csv", "fixes.csv", "config.json"):
        assert (a / f).read_bytes() == (b / f).read_bytes()
    c = tmp_path / "c"
    main(["simulate", "--duration", "6", "--seed", "6", "--out", str(c)])
    assert (a / "imu.csv").read_bytes() != (c / "imu.csv").read_bytes()


def test_simulate_zero_amplitude_has_no_lateral_motion(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"kind": "pts", "trajectory": {"amplitude": 0.0, "heading": 0.0}}))
    out = sim(tmp_path, "flat", "--spec", str(spec))
    gt = dataio.ingest_gt_csv(out / "truth.csv")
    assert not gt.p[:, 1].any()


def test_simulate_outage_drops_fixes(tmp_path):
    out = sim(tmp_path, "gap", "--gnss-outage", "2:4")
    assert [f.t for f in dataio.ingest_fixes_csv(out / "fixes.csv")] == [1.0, 5.0, 6.0]


def test_cli_flag_overrides_spec(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"seed": 99, "duration": 3}))
    out = sim(tmp_path, "ovr", "--spec", str(spec))
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["seed"] == 5 and cfg["trajectory"]["duration"] == 6.0


def test_train_one_epoch_one_history_row(tmp_path):
    data = sim(tmp_path)
    model = tmp_path / "m.mqn"
    assert main(["train", "--data", str(data), "--epochs", "1", "--out", str(model)]) == 0
    rows = (tmp_path / "m.history.csv").read_text().strip().splitlines()
    assert len(rows) == 2
    assert main(["evaluate", "--model", str(model), "--data", str(data), "--out", str(tmp_path / "ev")]) == 0
    assert (tmp_path / "ev" / "evaluation.csv").exists()


def test_train_reproducible(tmp_path):
    data = sim(tmp_path)
    for name in ("a", "b"):
        main(["train", "--data", str(data), "--epochs", "2", "--seed", "3", "--out", str(tmp_path / f"{name}.mqn")])
    assert (tmp_path / "a.mqn").read_bytes() == (tmp_path / "b.mqn").read_bytes()


@pytest.mark.parametrize("mode", ["INS_only", "INS_GNSS"])
def test_fuse_writes_outputs(tmp_path, mode):
    data = sim(tmp_path)
    out = tmp_path / "fused"
    assert main(["fuse", "--data", str(data), "--mode", mode, "--out", str(out)]) == 0
    for f in ("trajectory.csv", "results.csv", "config.json", "trajectory.png", "error.png"):
        assert (out / f).exists()
    rec = dataio.read_results_csv(out / "results.csv")[0]
    assert rec.mode == mode and np.isfinite(rec.rmse_m)


def test_fuse_mqn_without_model_is_validation_error(tmp_path):
    data = sim(tmp_path)
    assert main(["fuse", "--data", str(data), "--mode", "MQN_DR", "--out", str(tmp_path / "x")]) == 2


def test_missing_input_is_io_error(tmp_path):
    assert main(["fuse", "--data", str(tmp_path / "nothing"), "--mode", "INS_only", "--out", str(tmp_path / "x")]) == 4


def test_bad_spec_is_validation_error(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text("{not json")
    assert main(["simulate", "--spec", str(spec), "--out", str(tmp_path / "x")]) == 2


def test_unknown_experiment_key_is_validation_error(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"bogus": 1}))
    assert main(["experiment", "table2", "--spec", str(spec), "--out", str(tmp_path / "x")]) == 2


def test_experiment_cli_writes_csvs_and_figures(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"trajectory": {"duration": 6.0}}))
    out = tmp_path / "t2"
    assert main(["experiment", "table2", "--spec", str(spec), "--seeds", "2", "--platform", "robot",
                 "--out", str(out)]) == 0
    assert (out / "comparison.csv").exists()
    assert list((out / "figures").glob("*.png"))


@pytest.mark.parametrize("text, expected", [("3:7", (3.0, 7.0)), ("0.5:1.5", (0.5, 1.5))])
def test_parse_outage(text, expected):
    assert parse_outage(text) == expected


@pytest.mark.parametrize("text", ["3", "7:3", "a:b"])
def test_parse_outage_rejects(text):
    import argparse

    with pytest.raises(argparse.ArgumentTypeError):
        parse_outage(text)
