import json

import pytest

from styleloc.cli import main
from styleloc.evaluate import AGGREGATE_FIELDS, REPORT_HEADER
from styleloc.config import ConfigError, RunConfig


def test_help_and_usage_errors(capsys):
    assert main(["--help"]) == 0
    assert main(["train", "--help"]) == 0
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["train", "--bogus"]) == 1
    assert main(["eval", "--seed", "x"]) == 1
    out = capsys.readouterr()
    assert "gen-data" in out.out


def test_runtime_errors(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"shceme": "joint"}}))
    assert main(["train", "--config", str(bad)]) == 2
    assert "shceme" in capsys.readouterr().err
    assert main(["eval"]) == 2  # no checkpoint configured


def test_config_sections():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"bogus": {}})
    rc = RunConfig.from_dict({"data": {"path": "d"}, "matcher": {"tau": 5.0}, "train": {"scheme": "featnet_only"}})
    tc = rc.train()
    assert tc.dataset == "d" and tc.matcher.tau == 5.0 and tc.scheme == "featnet_only"
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"matcher": {"tau": -1.0}}).matcher()


def test_end_to_end_commands(tmp_path, capsys):
    data = tmp_path / "data"
    cfg = {
        "data": {"path": str(data), "train": 4, "test": 3, "seed": 1},
        "train": {"scheme": "featnet_only", "epochs": 1, "lr": 3e-4, "checkpoint_dir": str(tmp_path / "run"),
                  "validate": False},
        "matcher": {"gt_inlier_threshold": 10.0, "ransac": {"inlier_threshold": 1.0}},
        "eval": {"checkpoint": str(tmp_path / "run" / "ckpt_epoch001.ckpt")},
        "dump": {"checkpoint": str(tmp_path / "run" / "ckpt_epoch001.ckpt"), "pair": 1},
    }
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    assert main(["gen-data", "--config", str(path)]) == 0
    assert (data / "manifest.json").exists()
    assert main(["train", "--config", str(path), "--seed", "3"]) == 0
    capsys.readouterr()
    report = tmp_path / "r.csv"
    code = main(["eval", "--config", str(path), "--out", str(report)])
    lines = report.read_text().splitlines()
    assert lines[0] == ",".join(REPORT_HEADER) and len(lines) == 4
    if code == 0:
        agg = capsys.readouterr().out.strip().split(",")
        assert len(agg) == len(AGGREGATE_FIELDS) and int(agg[0]) == 3
    else:  # every pair failed: still a runtime error, with the rows written
        assert code == 2 and all(l.endswith("failed") for l in lines[1:])
    assert main(["dump", "--config", str(path), "--out", str(tmp_path / "dump")]) == 0
    assert len(list((tmp_path / "dump").glob("*.ppm"))) == 4


def test_gradcheck_command(tmp_path, capsys):
    out = tmp_path / "g.txt"
    assert main(["gradcheck", "--out", str(out)]) == 0
    text = out.read_text()
    assert "FAIL" not in text and "pose_loss_solve_pose" in text
