"""Dense soft matching, outlier rejection, weighted SVD pose and the feature losses."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np
import torch

from .diffcore import DTYPE, bilinear_sample
from .featnet import FeatureSet
from .se3 import SE3Pose
from .stereocam import D_MIN, StereoCamera, backproject

_ZNCC_EPS = 1e-12


class DegenerateMatchSetError(RuntimeError):
    """Too few matches survive to constrain a pose."""


class DegenerateGeometryError(RuntimeError):
    """Point configuration does not determine a rotation (or its gradient)."""


class LocalizationFailure(RuntimeError):
    """RANSAC found no hypothesis with at least three inliers."""


@dataclass
class RansacConfig:
    iterations: int = 256
    sample_size: int = 3
    inlier_threshold: float = 0.25
    seed: int = 0


@dataclass
class MatcherConfig:
    tau: float = 20.0
    stride: int = 2
    gt_inlier_threshold: float = 2.0
    d_min: float = D_MIN
    ransac: RansacConfig = field(default_factory=RansacConfig)

    def __post_init__(self):
        if isinstance(self.ransac, dict):
            self.ransac = RansacConfig(**self.ransac)
        if self.tau <= 0 or self.stride < 1:
            raise ValueError("tau must be > 0 and stride >= 1")
        if self.gt_inlier_threshold <= 0 or self.ransac.inlier_threshold <= 0:
            raise ValueError("thresholds must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MatcherConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class MatchSet:
    q_s: torch.Tensor    # N x 2 source keypoints
    q_t: torch.Tensor    # N x 2 matched target points
    p_s: torch.Tensor    # N x 3
    p_t: torch.Tensor    # N x 3
    d_s: torch.Tensor    # N x D
    d_t: torch.Tensor    # N x D
    s_s: torch.Tensor    # N
    s_t: torch.Tensor    # N
    w: torch.Tensor      # N
    index: torch.Tensor  # N, source keypoint ids

    def __len__(self) -> int:
        return int(self.index.shape[0])

    def subset(self, idx) -> "MatchSet":
        idx = torch.as_tensor(idx, dtype=torch.long)
        return MatchSet(**{f.name: getattr(self, f.name)[idx] for f in fields(self)})


def _zero_normalize(d: torch.Tensor) -> torch.Tensor:
    a = d - d.mean(dim=-1, keepdim=True)
    return a / torch.sqrt((a * a).mean(dim=-1, keepdim=True) + _ZNCC_EPS)


def zncc(d1: torch.Tensor, d2: torch.Tensor) -> torch.Tensor:
    """Zero-normalised cross correlation along the last axis (broadcasting)."""
    if d1.shape[-1] < 2:
        raise ValueError("descriptors need at least two entries")
    return (_zero_normalize(d1) * _zero_normalize(d2)).mean(dim=-1)


def zncc_matrix(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """All-pairs ZNCC between ``N x D`` and ``M x D`` descriptor sets."""
    return _zero_normalize(a) @ _zero_normalize(b).t() / a.shape[-1]


def weight(d_s, d_t, s_s, s_t) -> torch.Tensor:
    return 0.5 * (zncc(d_s, d_t) + 1.0) * s_s * s_t


def target_grid(height: int, width: int, stride: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Strided pixel grid: ``M x 2`` (u, v) coordinates and flat indices."""
    vs = torch.arange(0, height, stride)
    us = torch.arange(0, width, stride)
    vv, uu = torch.meshgrid(vs, us, indexing="ij")
    coords = torch.stack([uu.reshape(-1), vv.reshape(-1)], dim=-1).to(DTYPE)
    return coords, (vv * width + uu).reshape(-1)


def soft_match(desc_s: torch.Tensor, target_desc: torch.Tensor, tau: float, stride: int) -> torch.Tensor:
    """Softmax-weighted target coordinate for each source descriptor row."""
    dim, h, w = target_desc.shape
    coords, flat = target_grid(h, w, stride)
    dt = target_desc.reshape(dim, h * w)[:, flat].t()
    p = torch.softmax(tau * zncc_matrix(desc_s, dt), dim=1)
    return p @ coords


def match(source: FeatureSet, target: FeatureSet, src_disp: torch.Tensor, tgt_disp: torch.Tensor,
          cam: StereoCamera, cfg: MatcherConfig) -> MatchSet:
    """Match every source keypoint into the target image and lift both ends to 3D.

    Matches whose source or target disparity is at or below ``cfg.d_min`` are dropped.
    """
    q_s = source.keypoints
    d_s = bilinear_sample(source.dense_descriptors, q_s)
    q_t = soft_match(d_s, target.dense_descriptors, cfg.tau, cfg.stride)
    d_t = bilinear_sample(target.dense_descriptors, q_t)
    s_t = bilinear_sample(target.dense_scores, q_t)
    # Disparity maps are data with depth jumps; their spatial slope is not a useful
    # gradient, so the disparity lookup is taken as constant w.r.t. the coordinates.
    disp_s = bilinear_sample(src_disp.to(DTYPE), q_s.detach())
    disp_t = bilinear_sample(tgt_disp.to(DTYPE), q_t.detach())

    keep = ((disp_s > cfg.d_min) & (disp_t > cfg.d_min)).detach()
    idx = torch.nonzero(keep).reshape(-1)
    q_s, q_t, d_s, d_t = q_s[idx], q_t[idx], d_s[idx], d_t[idx]
    s_s, s_t = source.scores[idx], s_t[idx]
    p_s = backproject(torch.cat([q_s, disp_s[idx, None]], dim=1), cam, cfg.d_min)
    p_t = backproject(torch.cat([q_t, disp_t[idx, None]], dim=1), cam, cfg.d_min)
    return MatchSet(q_s, q_t, p_s, p_t, d_s, d_t, s_s, s_t, weight(d_s, d_t, s_s, s_t), idx)


def alignment_errors(matches: MatchSet, T: SE3Pose) -> torch.Tensor:
    with torch.no_grad():
        return torch.linalg.norm(T.detach().apply(matches.p_s) - matches.p_t, dim=1)


def reject_outliers_gt(matches: MatchSet, T_ts: SE3Pose, threshold: float) -> MatchSet:
    keep = torch.nonzero(alignment_errors(matches, T_ts) < threshold).reshape(-1)
    if keep.numel() < 3:
        raise DegenerateMatchSetError(f"only {keep.numel()} matches within {threshold} m of ground truth")
    return matches.subset(keep)


def _kabsch_np(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ma, mb = a.mean(0), b.mean(0)
    H = (b - mb).T @ (a - ma)
    U, S, Vt = np.linalg.svd(H)
    if S[1] <= 1e-9 * max(S[0], 1e-300):
        raise DegenerateGeometryError("collinear sample")
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    C = U @ D @ Vt
    return C, mb - C @ ma


def ransac(matches: MatchSet, cfg: MatcherConfig | RansacConfig, rng: np.random.Generator | None = None) -> MatchSet:
    """Largest consensus set over rigid hypotheses from random minimal samples."""
    rc = cfg.ransac if isinstance(cfg, MatcherConfig) else cfg
    n = len(matches)
    if n < rc.sample_size:
        raise LocalizationFailure(f"{n} matches, need {rc.sample_size}")
    if rng is None:
        rng = np.random.default_rng(rc.seed)
    ps = matches.p_s.detach().numpy()
    pt = matches.p_t.detach().numpy()
    best = None
    for _ in range(rc.iterations):
        sample = rng.choice(n, size=rc.sample_size, replace=False)
        try:
            C, r = _kabsch_np(ps[sample], pt[sample])
        except DegenerateGeometryError:
            continue
        err = np.linalg.norm(ps @ C.T + r - pt, axis=1)
        inl = np.flatnonzero(err < rc.inlier_threshold)
        if best is None or inl.size > best.size:
            best = inl
    if best is None or best.size < 3:
        raise LocalizationFailure("no hypothesis reached 3 inliers")
    return matches.subset(torch.from_numpy(best))


def solve_pose(matches: MatchSet | None = None, *, p_s=None, p_t=None, w=None,
               rank_tol: float = 1e-9, gap_tol: float = 1e-9) -> SE3Pose:
    """Weighted least-squares rigid alignment ``p_t ~ C p_s + r`` via SVD.

    Differentiable in the points and weights.  When a gradient is needed,
    repeated singular values make the SVD derivative undefined and raise
    :class:`DegenerateGeometryError`, as does a rank < 2 configuration.
    """
    if matches is not None:
        p_s, p_t, w = matches.p_s, matches.p_t, matches.w
    p_s = torch.as_tensor(p_s, dtype=DTYPE)
    p_t = torch.as_tensor(p_t, dtype=DTYPE)
    w = torch.as_tensor(w, dtype=DTYPE)
    if p_s.shape[0] < 3:
        raise DegenerateGeometryError(f"{p_s.shape[0]} points, need 3")
    wsum = w.sum()
    if not wsum.item() > 0:
        raise DegenerateGeometryError("weights sum to zero")
    wn = w / wsum
    mu_s = wn @ p_s
    mu_t = wn @ p_t
    cov = (p_t - mu_t).t() @ ((p_s - mu_s) * wn[:, None])
    U, S, Vh = torch.linalg.svd(cov)
    s = S.detach()
    if s[1] <= rank_tol * max(s[0].item(), 1e-300):
        raise DegenerateGeometryError("points are collinear or coincident")
    if cov.requires_grad and min(s[0] - s[1], s[1] - s[2]) <= gap_tol * s[0]:
        raise DegenerateGeometryError("repeated singular values; SVD gradient undefined")
    sign = torch.sign(torch.linalg.det(U @ Vh)).detach()
    D = torch.diag(torch.stack([torch.ones((), dtype=DTYPE), torch.ones((), dtype=DTYPE), sign]))
    C = U @ D @ Vh
    r = mu_t - C @ mu_s
    return SE3Pose(C, r)


def keypoint_loss(matches: MatchSet, T_ts: SE3Pose) -> torch.Tensor:
    return ((T_ts.apply(matches.p_s) - matches.p_t) ** 2).sum()


def pose_loss(T_hat: SE3Pose, T: SE3Pose, lam: float = 1.0) -> torch.Tensor:
    """Squared translation error plus ``lam`` times ``||C C_hat^T - I||_F^2``."""
    eye = torch.eye(3, dtype=DTYPE)
    return ((T.r - T_hat.r) ** 2).sum() + lam * ((T.C @ T_hat.C.t() - eye) ** 2).sum()

