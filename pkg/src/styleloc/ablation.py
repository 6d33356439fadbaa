"""The four-scheme comparison for one seed.

Order matters: ``featnet_only`` runs first and its final checkpoint is the
pretrained FeatNet used by ``transnet_only`` (at evaluation) and by
``sequential`` (frozen during training).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from .evaluate import EvalReport, evaluate
from .matchpose import MatcherConfig
from .synthdata import Dataset
from .trainer import LossWeights, TrainConfig, load_networks, train

log = logging.getLogger(__name__)

ORDER = ("featnet_only", "transnet_only", "joint", "sequential")


@dataclass
class AblationConfig:
    epochs: int = 6
    lr: float = 3e-4
    weights: LossWeights = field(default_factory=LossWeights)
    matcher: MatcherConfig = field(default_factory=MatcherConfig)
    validate: bool = True
    pose_warmup_epochs: int = 1


@dataclass
class SchemeResult:
    scheme: str
    checkpoint: Path
    report: EvalReport
    seconds: float

    @property
    def median_dx(self) -> float:
        return self.report.aggregate()["median_dx"]

    @property
    def mean_inliers(self) -> float:
        return self.report.aggregate()["mean_inliers"]


def run_seed(dataset: str, seed: int, out_dir, cfg: AblationConfig | None = None,
             schemes=ORDER) -> dict[str, SchemeResult]:
    cfg = cfg or AblationConfig()
    ds = Dataset(dataset)
    test = ds.pairs("test")
    out = Path(out_dir)
    base = TrainConfig(lr=cfg.lr, epochs=cfg.epochs, seed=seed, weights=cfg.weights, matcher=cfg.matcher,
                       dataset=str(dataset), validate=cfg.validate,
                       pose_warmup_epochs=cfg.pose_warmup_epochs)
    results: dict[str, SchemeResult] = {}
    pretrained = None
    for scheme in ORDER:
        if scheme not in schemes:
            continue
        if scheme in ("transnet_only", "sequential") and pretrained is None:
            raise ValueError(f"{scheme} needs the featnet_only run first")
        run_cfg = replace(base, scheme=scheme, checkpoint_dir=str(out / f"seed{seed}" / scheme),
                          pretrained_featnet=str(pretrained) if scheme in ("transnet_only", "sequential") else None)
        t0 = time.perf_counter()
        ckpt = train(run_cfg, ds)["checkpoints"][-1]
        nets, _ = load_networks(ckpt)
        report = evaluate(nets, test, cfg.matcher)
        results[scheme] = SchemeResult(scheme, ckpt, report, time.perf_counter() - t0)
        log.info("seed %d %s: %.1fs", seed, scheme, results[scheme].seconds)
        if scheme == "featnet_only":
            pretrained = ckpt
    return results


def ordering(results: dict[str, SchemeResult]) -> dict[str, bool]:
    """The four ordering properties (a)-(d) for one seed."""
    f, t, j, s = (results[k] for k in ORDER)
    return {
        "a_transnet_only_worse": t.median_dx > f.median_dx,
        "b_joint_not_worse": j.median_dx <= f.median_dx,
        "c_joint_sequential_close": abs(j.median_dx - s.median_dx) <= 0.5 * j.median_dx,
        "d_joint_inliers": j.mean_inliers >= f.mean_inliers,
    }
