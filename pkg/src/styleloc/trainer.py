"""Training schemes, total loss and Adam.

Schemes:

=============  =====================  ==================================
scheme         trainable              loss
=============  =====================  ==================================
featnet_only   FeatNet                l3*pose + l4*keypoint (raw target)
transnet_only  TransNet               l1*style + l2*content
joint          TransNet + FeatNet     all four terms
sequential     TransNet (FeatNet      all four terms, FeatNet loaded from
               frozen)                a featnet_only checkpoint
=============  =====================  ==================================

The source (day) image always goes to FeatNet untransformed.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch

from . import diffcore
from .diffcore import DTYPE, load_checkpoint, load_namespace, namespaced, save_checkpoint
from .featnet import FeatureNetwork, detect_batch
from .matchpose import (DegenerateGeometryError, DegenerateMatchSetError, MatcherConfig, keypoint_loss, match,
                        pose_loss, reject_outliers_gt, solve_pose)
from .synthdata import Dataset, FramePair
from .transnet import LossNetwork, TransformNetwork, content_loss, style_loss

log = logging.getLogger(__name__)

SCHEMES = ("featnet_only", "transnet_only", "joint", "sequential")
HISTORY_HEADER = ["epoch", "step", "style", "content", "pose", "keypoint", "total",
                  "val_dx", "val_dy", "val_dtheta", "val_inliers"]
LOSS_TERMS = ("style", "content", "pose", "keypoint")


class NonFiniteGradientError(FloatingPointError):
    pass


class DegenerateEpochError(RuntimeError):
    pass


@dataclass
class LossWeights:
    style: float = 1e-5
    content: float = 1e-5
    pose: float = 10.0
    keypoint: float = 2.0
    rot: float = 1.0

    def __post_init__(self):
        if min(self.style, self.content, self.pose, self.keypoint, self.rot) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class TrainConfig:
    scheme: str = "joint"
    lr: float = 1e-4
    epochs: int = 5
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    matcher: MatcherConfig = field(default_factory=MatcherConfig)
    dataset: str = "data/synth"
    checkpoint_dir: str = "runs/run"
    pretrained_featnet: str | None = None
    lossnet_seed: int = 1234
    train_limit: int | None = None
    val_limit: int | None = None
    validate: bool = True
    pose_warmup_epochs: int = 0  # leading epochs trained with the pose weight at 0

    def __post_init__(self):
        if self.pose_warmup_epochs < 0:
            raise ValueError("pose_warmup_epochs must be non-negative")
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if isinstance(self.matcher, dict):
            self.matcher = MatcherConfig.from_dict(self.matcher)
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.scheme == "sequential" and not self.pretrained_featnet:
            raise ValueError("sequential scheme needs pretrained_featnet (a featnet_only checkpoint)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


# --- networks ---------------------------------------------------------------


@dataclass
class Networks:
    scheme: str
    featnet: FeatureNetwork | None = None
    transnet: TransformNetwork | None = None
    lossnet: LossNetwork | None = None

    @property
    def uses_transnet(self) -> bool:
        return self.scheme != "featnet_only"

    @property
    def trains_features(self) -> bool:
        return self.scheme != "transnet_only"

    def trainable(self) -> dict[str, torch.Tensor]:
        out = {}
        for prefix, net in (("featnet", self.featnet), ("transnet", self.transnet)):
            if net is None:
                continue
            for name, p in net.named_parameters():
                if p.requires_grad:
                    out[f"{prefix}.{name}"] = p
        return out

    def state(self) -> dict[str, torch.Tensor]:
        out = {}
        for prefix, net in (("featnet", self.featnet), ("transnet", self.transnet), ("lossnet", self.lossnet)):
            if net is not None:
                out.update(namespaced(prefix, net))
        return out


def load_pretrained_featnet(path) -> FeatureNetwork:
    tensors, _ = load_checkpoint(path)
    net = FeatureNetwork()
    load_namespace(net, "featnet", tensors)
    return diffcore.freeze(net)


def build_networks(cfg: TrainConfig) -> Networks:
    """Fresh networks for a scheme; FeatNet and TransNet seeds derive from ``cfg.seed``."""
    nets = Networks(cfg.scheme)
    if cfg.scheme in ("featnet_only", "joint"):
        nets.featnet = FeatureNetwork(seed=cfg.seed)
    elif cfg.pretrained_featnet:
        nets.featnet = load_pretrained_featnet(cfg.pretrained_featnet)
    if nets.uses_transnet:
        nets.transnet = TransformNetwork(seed=cfg.seed + 7919)
        nets.lossnet = LossNetwork(seed=cfg.lossnet_seed)
    return nets


def load_networks(path, featnet_checkpoint=None) -> tuple[Networks, dict]:
    """Rebuild networks from a checkpoint; ``featnet_checkpoint`` overrides its FeatNet."""
    tensors, meta = load_checkpoint(path)
    scheme = meta.get("scheme", "joint")
    nets = Networks(scheme)
    if any(k.startswith("featnet.") for k in tensors):
        nets.featnet = FeatureNetwork()
        load_namespace(nets.featnet, "featnet", tensors)
    if any(k.startswith("transnet.") for k in tensors):
        nets.transnet = TransformNetwork()
        load_namespace(nets.transnet, "transnet", tensors)
        nets.lossnet = LossNetwork(seed=meta.get("lossnet_seed", 1234))
    if featnet_checkpoint:
        nets.featnet = load_pretrained_featnet(featnet_checkpoint)
    for net in (nets.featnet, nets.transnet):
        if net is not None:
            diffcore.freeze(net)
    return nets, meta


# --- Adam -------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_update(params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor | None],
                state: AdamState, lr: float) -> None:
    """Bias-corrected Adam, in place.  Missing grads count as zero."""
    for name, g in grads.items():
        if g is not None and not bool(torch.isfinite(g).all()):
            raise NonFiniteGradientError(f"non-finite gradient for {name}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    with torch.no_grad():
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                g = torch.zeros_like(p)
            if name not in state.m:
                state.m[name] = torch.zeros_like(p)
                state.v[name] = torch.zeros_like(p)
            if state.m[name].shape != p.shape:
                raise ValueError(f"Adam moment shape mismatch for {name}")
            m = state.m[name].mul_(b1).add_(g, alpha=1 - b1)
            v = state.v[name].mul_(b2).addcmul_(g, g, value=1 - b2)
            p.sub_(lr * (m / c1) / ((v / c2).sqrt() + state.eps))


# --- one step ----------------------------------------------------------------


def forward_losses(pair: FramePair, nets: Networks, cfg: TrainConfig) -> dict:
    """Raw loss terms for one pair under the networks' scheme (masked terms are 0)."""
    zero = torch.zeros((), dtype=DTYPE)
    losses = {k: zero for k in LOSS_TERMS}
    y_s, y_t = pair.src, pair.tgt
    y_hat = y_t
    if nets.uses_transnet:
        y_hat = nets.transnet(y_t)[0]
        losses["style"] = style_loss(y_hat, y_s, nets.lossnet)
        losses["content"] = content_loss(y_hat, y_t, nets.lossnet)
    n_matches = 0
    if nets.trains_features:
        fs, ft = detect_batch(torch.stack([y_s, y_hat]), nets.featnet)
        m = match(fs, ft, pair.src_disp, pair.tgt_disp, pair.camera, cfg.matcher)
        m = reject_outliers_gt(m, pair.T_ts, cfg.matcher.gt_inlier_threshold)
        n_matches = len(m)
        T_hat = solve_pose(m)
        losses["pose"] = pose_loss(T_hat, pair.T_ts, cfg.weights.rot)
        losses["keypoint"] = keypoint_loss(m, pair.T_ts)
    w = cfg.weights
    weighted = {
        "style": w.style * losses["style"],
        "content": w.content * losses["content"],
        "pose": w.pose * losses["pose"],
        "keypoint": w.keypoint * losses["keypoint"],
    }
    total = weighted["style"] + weighted["content"] + weighted["pose"] + weighted["keypoint"]
    return {"losses": losses, "weighted": weighted, "total": total, "n_matches": n_matches}


def train_step(pair: FramePair, nets: Networks, cfg: TrainConfig, adam: AdamState) -> dict:
    """Forward, backward and one Adam update.  Degenerate pairs are skipped."""
    params = nets.trainable()
    diffcore.zero_grad(params.values())
    try:
        out = forward_losses(pair, nets, cfg)
        diffcore.backward(out["total"])
        adam_update(params, {k: p.grad for k, p in params.items()}, adam, cfg.lr)
    except (DegenerateMatchSetError, DegenerateGeometryError, NonFiniteGradientError) as exc:
        log.warning("pair %s skipped: %s", pair.pair_id, exc)
        return {"skipped": True, "reason": str(exc)}
    finally:
        diffcore.zero_grad(params.values())
    return {
        "skipped": False,
        **{k: float(v.detach()) for k, v in out["losses"].items()},
        **{f"w_{k}": float(v.detach()) for k, v in out["weighted"].items()},
        "total": float(out["total"].detach()),
        "n_matches": out["n_matches"],
    }


# --- full run ------------------------------------------------------------------


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return repr(float(x))


def checkpoint_meta(cfg: TrainConfig, epoch: int) -> dict:
    return {"scheme": cfg.scheme, "epoch": epoch, "seed": cfg.seed, "lossnet_seed": cfg.lossnet_seed,
            "pretrained_featnet": cfg.pretrained_featnet, "config": cfg.to_dict()}


def train(cfg: TrainConfig, dataset: Dataset | None = None) -> dict:
    """Run the configured scheme; writes per-epoch checkpoints and ``history.csv``."""
    from .evaluate import evaluate  # evaluate imports this module

    ds = dataset or Dataset(cfg.dataset)
    out_dir = Path(cfg.checkpoint_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))

    train_ids = ds.split("train")
    if cfg.train_limit is not None:
        train_ids = train_ids[:cfg.train_limit]
    pairs = {i: ds.pair(i) for i in train_ids}
    val_pairs = ds.pairs("test", cfg.val_limit) if cfg.validate else []

    nets = build_networks(cfg)
    adam = AdamState()
    history_path = out_dir / "history.csv"
    checkpoints = []
    step = 0
    with open(history_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTORY_HEADER)
        for epoch in range(1, cfg.epochs + 1):
            order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_ids))
            sums = {k: 0.0 for k in (*LOSS_TERMS, "total")}
            done = 0
            step_cfg = cfg
            if epoch <= cfg.pose_warmup_epochs:
                # the pose solve on random early matches swamps the keypoint signal
                step_cfg = replace(cfg, weights=replace(cfg.weights, pose=0.0))
            for i in order:
                res = train_step(pairs[train_ids[i]], nets, step_cfg, adam)
                step += 1
                if res["skipped"]:
                    continue
                done += 1
                for k in sums:
                    sums[k] += res[k]
            if done == 0:
                raise DegenerateEpochError(f"epoch {epoch}: every step was skipped")
            means = {k: v / done for k, v in sums.items()}
            val = {"median_dx": None, "median_dy": None, "median_dtheta": None, "mean_inliers": None}
            if val_pairs and nets.featnet is not None:
                try:
                    val = evaluate(nets, val_pairs, cfg.matcher).aggregate()
                except RuntimeError as exc:
                    log.warning("validation failed at epoch %d: %s", epoch, exc)
            writer.writerow([epoch, step, *(_fmt(means[k]) for k in (*LOSS_TERMS, "total")),
                             _fmt(val["median_dx"]), _fmt(val["median_dy"]), _fmt(val["median_dtheta"]),
                             _fmt(val["mean_inliers"])])
            fh.flush()
            ckpt = out_dir / f"ckpt_epoch{epoch:03d}.ckpt"
            save_checkpoint(ckpt, nets.state(), checkpoint_meta(cfg, epoch))
            checkpoints.append(ckpt)
            log.info("epoch %d: total %.6g (%d/%d steps), val median dx %s", epoch, means["total"], done,
                     len(order), val["median_dx"])
    return {"checkpoints": checkpoints, "history": history_path, "networks": nets, "steps": step}
