import json
import subprocess
import sys

import numpy as np
import pytest

from physfilter import __version__
from physfilter.cli import main
from physfilter.trajectory import read_trajectory_csv

BASE = {
    "schema_version": 1, "seed": 3,
    "system": {"A": [[0.8]], "B": [[0.5]], "C": [[1.0]]},
    "dataset": {"T": 60, "u_max": 6.0, "noise_std": 0.05, "L": 8},
    "paths": {"data": "dataset.csv"},
    "predictor": {"t_init": 4, "n_h": 4, "regularizer": 1e-4},
    "pe": {"n_x": 1},
    "rule": {"type": "temperature", "u_max": 6.0},
    "filter": {"n_samples": 20},
    "mpc": {"reference": 10.0, "closed_loop_steps": 5},
    "bid": {"y_min": 0.0, "y_max": 12.0, "agc": [[1, -1], [0.5, -0.5], [1, 0], [0, 1]]},
}
COMMANDS = ["check-pe", "predict", "filter", "mpc", "bid"]


def write_config(d, cfg=None, **updates):
    cfg = json.loads(json.dumps(cfg or BASE))
    for key, val in updates.items():
        cfg[key] = val
    path = d / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def run(d, *argv):
    return main([*argv, "--config", str(d / "cfg.json"), "--out", str(d)])


@pytest.fixture
def workdir(tmp_path):
    write_config(tmp_path)
    assert run(tmp_path, "simulate") == 0
    return tmp_path


def test_simulate_outputs(workdir):
    traj = read_trajectory_csv(workdir / "dataset.csv")
    assert traj.T == 60
    meta = json.loads((workdir / "dataset.json").read_text())
    assert meta["seed"] == 3 and meta["schema_version"] == 1
    assert meta["pe"]["satisfied"] and len(meta["system_sha256"]) == 64


def test_default_length(tmp_path):
    cfg = json.loads(json.dumps(BASE))
    del cfg["dataset"]["T"]
    write_config(tmp_path, cfg)
    assert run(tmp_path, "simulate") == 0
    assert read_trajectory_csv(tmp_path / "dataset.csv").T == 384


@pytest.mark.parametrize("command", COMMANDS)
def test_every_command_succeeds(workdir, command):
    assert run(workdir, command) == 0


def test_outputs_of_each_command(workdir):
    for c in COMMANDS:
        run(workdir, c)
    pe = json.loads((workdir / "pe.json").read_text())
    assert pe["order"] == 9 and pe["satisfied"]
    pred = (workdir / "prediction.csv").read_text().splitlines()
    assert pred[0] == "k,u1,y1" and len(pred) == 5
    rep = json.loads((workdir / "filter_report.json").read_text())
    assert rep["status"] == "LocalOptimum"
    assert not rep["pre_verification"]["passed"] and rep["post_verification"]["passed"]
    filt = read_trajectory_csv(workdir / "filtered.csv")
    np.testing.assert_array_equal(filt.inputs, read_trajectory_csv(workdir / "dataset.csv").inputs)
    assert len((workdir / "closed_loop.csv").read_text().splitlines()) == 1 + 4 + 5
    bid = json.loads((workdir / "bid.json").read_text())
    assert bid["status"] == "Feasible" and bid["gamma"] > 0


def test_determinism(tmp_path):
    outputs = []
    for name in ("a", "b"):
        d = tmp_path / name
        d.mkdir()
        write_config(d)
        for c in ["simulate", *COMMANDS]:
            run(d, c)
        outputs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    assert outputs[0].keys() == outputs[1].keys() and len(outputs[0]) >= 11
    assert outputs[0] == outputs[1]


def test_split_one_equals_default(workdir):
    run(workdir, "predict")
    plain = (workdir / "prediction.csv").read_bytes()
    run(workdir, "predict", "--split", "1")
    assert (workdir / "prediction.csv").read_bytes() == plain
    assert run(workdir, "predict", "--split", "2") == 0
    assert len((workdir / "prediction.csv").read_text().splitlines()) == 9


def test_zero_agc_exits_3(workdir):
    write_config(workdir, bid={"y_min": 0.0, "y_max": 12.0, "agc": [[0.0]] * 4})
    assert run(workdir, "bid") == 3
    assert json.loads((workdir / "bid.json").read_text())["gamma"] is None


def test_agc_file_flag(workdir):
    (workdir / "agc.csv").write_text("s1,s2\n1,-1\n0.5,-0.5\n1,0\n0,1\n")
    write_config(workdir, bid={"y_min": 0.0, "y_max": 12.0})
    assert run(workdir, "bid") == 2
    assert main(["bid", "--config", str(workdir / "cfg.json"), "--out", str(workdir),
                 "--agc", str(workdir / "agc.csv")]) == 0


@pytest.mark.parametrize("updates", [
    {"unknown": 1},
    {"schema_version": 2},
    {"rule": {"type": "custom", "Y": {"H": [[1.0, 2.0]], "h": [0.0]}}},
    {"predictor": {"t_init": 4, "n_h": 4, "regularizer": -1.0}},
    {"predictor": {"t_init": 40, "n_h": 40}},
    {"paths": {"data": "missing.csv"}},
])
def test_bad_input_exits_2(workdir, updates):
    write_config(workdir, **updates)
    assert run(workdir, "filter") == 2


def test_malformed_json_exits_2(tmp_path):
    (tmp_path / "cfg.json").write_text("{not json")
    assert run(tmp_path, "simulate") == 2


def test_constant_input_not_excited(workdir):
    lines = ["t,u1,y1"] + [f"{k},1,2" for k in range(40)]
    (workdir / "const.csv").write_text("\n".join(lines) + "\n")
    assert main(["check-pe", "--config", str(workdir / "cfg.json"), "--out", str(workdir),
                 "--data", str(workdir / "const.csv"), "--order", "3"]) == 0
    rep = json.loads((workdir / "pe.json").read_text())
    assert rep["rank"] == 1 and rep["required"] == 3 and not rep["satisfied"]


def test_negative_flags_rejected(workdir):
    assert run(workdir, "predict", "--split", "0") == 2


def test_help_and_version():
    out = subprocess.run([sys.executable, "-m", "physfilter", "--help"], capture_output=True,
                         text=True, check=True).stdout
    for c in ["simulate", *COMMANDS]:
        assert c in out
    ver = subprocess.run([sys.executable, "-m", "physfilter", "--version"], capture_output=True,
                         text=True, check=True).stdout
    assert __version__ in ver
