import hashlib
import math

import numpy as np
import pytest
import torch

from styleloc.diffcore import DTYPE, save_checkpoint
from styleloc.evaluate import (REPORT_HEADER, EvalReport, EvaluationError, PairResult, dump_artifacts, evaluate,
                               pose_errors, yaw_deg)
from styleloc.matchpose import LocalizationFailure
from styleloc.se3 import SE3Pose, rot_x, rot_y
from styleloc.synthdata import read_ppm
from styleloc.trainer import TrainConfig, build_networks, load_networks


def test_ground_truth_estimator_gives_zero_errors(tiny_dataset):
    pairs = tiny_dataset.pairs("test")
    rep = evaluate(None, pairs, estimator=lambda p: (p.T_ts, 24))
    assert rep.failures == 0
    assert all(r.dx == 0 and r.dy == 0 for r in rep.rows)
    # yaw of C C^T is zero up to the rounding of the product
    assert max(r.dtheta for r in rep.rows) < 1e-12


def test_lateral_perturbation_metric():
    T = SE3Pose(torch.from_numpy(rot_y(0.2) @ rot_x(0.05)), torch.tensor([0.1, 0.0, 1.2], dtype=DTYPE))
    lateral = SE3Pose(torch.eye(3, dtype=DTYPE), torch.tensor([0.3, 0.0, 0.0], dtype=DTYPE))
    dx, dy, dth = pose_errors(lateral.compose(T), T)
    assert dx == pytest.approx(0.0, abs=1e-12) and dy == pytest.approx(0.3, abs=1e-12)
    assert dth == pytest.approx(0.0, abs=1e-12)


def test_yaw_extraction():
    assert yaw_deg(rot_y(math.radians(7.0))) == pytest.approx(7.0, abs=1e-12)
    assert yaw_deg(np.eye(3)) == 0.0


def test_aggregates_match_brute_force():
    rng = np.random.default_rng(0)
    rows = [PairResult(f"p{i}", *rng.uniform(0, 1, 3), int(rng.integers(3, 30))) for i in range(9)]
    rows.append(PairResult("bad", math.nan, math.nan, math.nan, 0, "failed", 0.5))
    agg = EvalReport(rows).aggregate()
    ok = rows[:-1]
    assert agg["n_pairs"] == 10 and agg["failures"] == 1
    for k in ("dx", "dy", "dtheta", "inliers"):
        vals = sorted(getattr(r, k) for r in ok)
        assert agg[f"mean_{k}"] == pytest.approx(sum(vals) / len(vals), rel=1e-12)
        assert agg[f"median_{k}"] == vals[len(vals) // 2]


def test_all_failed_raises():
    with pytest.raises(EvaluationError):
        EvalReport([PairResult("a", math.nan, math.nan, math.nan, 0, "failed")]).aggregate()


def test_failures_are_rows(tiny_dataset):
    def boom(p):
        raise LocalizationFailure("no consensus")
    rep = evaluate(None, tiny_dataset.pairs("test", 2), estimator=boom)
    assert rep.failures == 2 and [r.status for r in rep.rows] == ["failed", "failed"]
    assert all(r.prior_dx == abs(float(tiny_dataset.pair(r.pair_id).T_ts.r[2])) for r in rep.rows)


def test_csv_schema(tmp_path, tiny_dataset):
    rep = evaluate(None, tiny_dataset.pairs("test", 2), estimator=lambda p: (p.T_ts, 5))
    rep.write_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == ",".join(REPORT_HEADER) and len(lines) == 3


def _digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_evaluate_is_read_only_and_deterministic(tiny_dataset, tmp_path):
    nets = build_networks(TrainConfig(scheme="joint", seed=0))
    ckpt = save_checkpoint(tmp_path / "j.ckpt", nets.state(), {"scheme": "joint"})
    before = (_digest(tiny_dataset.root), ckpt.read_bytes())
    loaded, _ = load_networks(ckpt)
    a = evaluate(loaded, tiny_dataset.pairs("test"))
    b = evaluate(load_networks(ckpt)[0], tiny_dataset.pairs("test"))
    assert (_digest(tiny_dataset.root), ckpt.read_bytes()) == before
    assert [(r.dx, r.dy, r.dtheta, r.inliers, r.status) for r in a.rows] == \
           [(r.dx, r.dy, r.dtheta, r.inliers, r.status) for r in b.rows]


def test_transnet_only_needs_a_featnet(tiny_dataset):
    nets = build_networks(TrainConfig(scheme="transnet_only"))
    with pytest.raises(EvaluationError):
        evaluate(nets, tiny_dataset.pairs("test", 1))


@pytest.mark.parametrize("scheme", ["joint", "featnet_only"])
def test_dump_artifacts(tiny_dataset, tmp_path, scheme):
    nets = build_networks(TrainConfig(scheme=scheme))
    pair = tiny_dataset.pair(tiny_dataset.split("test")[0])
    written = dump_artifacts(nets, pair, tmp_path)
    assert ("transformed" in written) == (scheme == "joint")
    for name, path in written.items():
        img = read_ppm(path)
        assert img.shape == (64, 96, 3)
        if name.endswith("detector"):
            assert img.min() == 0.0 and img.max() == 1.0
