"""Localization metrics over dataset splits, and artifact dumps.

Errors are reported in a path frame built from the camera frame:
longitudinal ``dx`` along the optical axis (camera z), lateral ``dy`` along
camera x, yaw ``dtheta`` about the vertical camera y axis.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .featnet import detect_batch
from .matchpose import (DegenerateGeometryError, LocalizationFailure, MatcherConfig, match, ransac,
                        solve_pose)
from .se3 import SE3Pose
from .synthdata import FramePair, write_ppm
from .trainer import Networks

REPORT_HEADER = ["pair_id", "dx_m", "dy_m", "dtheta_deg", "inliers", "status"]
AGGREGATE_FIELDS = ["n_pairs", "failures", "mean_dx", "median_dx", "mean_dy", "median_dy",
                    "mean_dtheta", "median_dtheta", "mean_inliers", "median_inliers"]


class EvaluationError(RuntimeError):
    pass


def yaw_deg(C) -> float:
    C = np.asarray(C.detach() if isinstance(C, torch.Tensor) else C)
    return math.degrees(math.atan2(C[0, 2], C[2, 2]))


def pose_errors(T_hat: SE3Pose, T: SE3Pose) -> tuple[float, float, float]:
    r = T.r.detach().numpy()
    rh = T_hat.r.detach().numpy()
    rel = T.C.detach().numpy() @ T_hat.C.detach().numpy().T
    return abs(r[2] - rh[2]), abs(r[0] - rh[0]), abs(yaw_deg(rel))


@dataclass
class PairResult:
    pair_id: str
    dx: float
    dy: float
    dtheta: float
    inliers: int
    status: str = "ok"
    prior_dx: float = math.nan  # dx of the no-correction (identity) estimate


@dataclass
class EvalReport:
    rows: list[PairResult]

    @property
    def ok_rows(self) -> list[PairResult]:
        return [r for r in self.rows if r.status == "ok"]

    @property
    def failures(self) -> int:
        return sum(r.status != "ok" for r in self.rows)

    def aggregate(self) -> dict:
        ok = self.ok_rows
        if not ok:
            raise EvaluationError("every pair failed to localize")
        col = {k: np.array([getattr(r, k) for r in ok], dtype=np.float64) for k in ("dx", "dy", "dtheta", "inliers")}
        out = {"n_pairs": len(self.rows), "failures": self.failures}
        for k in ("dx", "dy", "dtheta", "inliers"):
            out[f"mean_{k}"] = float(col[k].mean())
            out[f"median_{k}"] = float(np.median(col[k]))
        return out

    def median_dx_with_fallback(self) -> float:
        """Median dx over all pairs, scoring failed pairs by the no-correction estimate."""
        return float(np.median([r.dx if r.status == "ok" else r.prior_dx for r in self.rows]))

    def aggregate_line(self) -> str:
        agg = self.aggregate()
        return ",".join(str(agg[k]) if isinstance(agg[k], int) else repr(agg[k]) for k in AGGREGATE_FIELDS)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_HEADER)
            for r in self.rows:
                w.writerow([r.pair_id, repr(r.dx), repr(r.dy), repr(r.dtheta), r.inliers, r.status])


@torch.no_grad()
def localize(pair: FramePair, nets: Networks, cfg: MatcherConfig,
             rng: np.random.Generator | None = None) -> tuple[SE3Pose, int]:
    """Inference path: (transform) -> detect -> match -> RANSAC -> weighted SVD."""
    if nets.featnet is None:
        raise EvaluationError("no FeatNet available; transnet_only runs need a pretrained FeatNet")
    y_t = pair.tgt
    if nets.transnet is not None:
        y_t = nets.transnet(y_t)[0]
    fs, ft = detect_batch(torch.stack([pair.src, y_t]), nets.featnet)
    m = match(fs, ft, pair.src_disp, pair.tgt_disp, pair.camera, cfg)
    inl = ransac(m, cfg, rng)
    return solve_pose(inl), len(inl)


def evaluate(nets: Networks, pairs: Sequence[FramePair], cfg: MatcherConfig | None = None,
             estimator: Callable[[FramePair], tuple[SE3Pose, int]] | None = None) -> EvalReport:
    """Per-pair errors; failed localizations are kept as rows with status ``failed``.

    ``estimator`` replaces the network path (used to check the metric plumbing).
    """
    cfg = cfg or MatcherConfig()
    rows = []
    for k, pair in enumerate(pairs):
        prior_dx = pose_errors(SE3Pose.identity(), pair.T_ts)[0]
        try:
            if estimator is not None:
                T_hat, n_inl = estimator(pair)
            else:
                rng = np.random.default_rng([cfg.ransac.seed, k])
                T_hat, n_inl = localize(pair, nets, cfg, rng)
        except (LocalizationFailure, DegenerateGeometryError):
            rows.append(PairResult(pair.pair_id, math.nan, math.nan, math.nan, 0, "failed", prior_dx))
            continue
        dx, dy, dth = pose_errors(T_hat, pair.T_ts)
        rows.append(PairResult(pair.pair_id, float(dx), float(dy), float(dth), int(n_inl), "ok", prior_dx))
    return EvalReport(rows)


def minmax(x: torch.Tensor) -> np.ndarray:
    a = x.detach().numpy().astype(np.float64)
    lo, hi = a.min(), a.max()
    return (a - lo) / (hi - lo) if hi > lo else np.zeros_like(a)


@torch.no_grad()
def dump_artifacts(nets: Networks, pair: FramePair, out_dir) -> dict[str, Path]:
    """Write source/target/transformed images and min-max normalised detector logits as PPM."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {}

    def put(name, img_hw3):
        p = out / f"{pair.pair_id}_{name}.ppm"
        write_ppm(p, img_hw3)
        written[name] = p

    put("source", pair.src.numpy().transpose(1, 2, 0))
    put("target", pair.tgt.numpy().transpose(1, 2, 0))
    y_t = pair.tgt
    if nets.transnet is not None:
        y_t = nets.transnet(pair.tgt)[0]
        put("transformed", y_t.numpy().transpose(1, 2, 0))
    if nets.featnet is not None:
        fs, ft = detect_batch(torch.stack([pair.src, y_t]), nets.featnet)
        for name, fset in (("source_detector", fs), ("target_detector", ft)):
            put(name, np.repeat(minmax(fset.detector_logits)[..., None], 3, axis=2))
    return written
