"""Finite-difference gradient suite over the pipeline's primitives and losses.

Each check evaluates :func:`diffcore.grad_check` on a small seeded input and
compares the worst relative error with its tolerance.  Used by the
``gradcheck`` CLI subcommand and by the tests.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import torch
import torch.nn.functional as F

from .diffcore import DTYPE, GradCheckError, bilinear_sample, grad_check, upsample_nearest, window_softmax
from .featnet import CELL, FeatureNetwork, FeatureSet, detect
from .matchpose import MatcherConfig, keypoint_loss, match, pose_loss, solve_pose
from .se3 import SE3Pose, rot_y, rot_z
from .stereocam import StereoCamera, backproject, project
from .transnet import LossNetwork, TransformNetwork, content_loss, style_loss

PRIMITIVE_TOL = 1e-5
LOSS_TOL = 1e-4
POSE_TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float
    message: str = ""

    @property
    def passed(self) -> bool:
        return self.error < self.tol


@dataclass
class Check:
    name: str
    tol: float
    build: Callable[[torch.Generator], tuple[Callable, torch.Tensor]]


def _rand(gen, *shape, lo=-1.0, hi=1.0):
    return lo + (hi - lo) * torch.rand(*shape, generator=gen, dtype=DTYPE)


def _away_from_zero(gen, *shape):
    # keeps ReLU inputs off the kink so central differences are valid
    x = _rand(gen, *shape)
    return torch.where(x.abs() < 0.1, x.sign() * 0.1 + x, x)


def _primitives() -> list[Check]:
    def binary(op):
        def build(gen):
            b = _rand(gen, 4, 5, lo=0.5, hi=1.5)
            return (lambda x: op(x, b).sum()), _rand(gen, 4, 5)
        return build

    def conv(stride):
        def build(gen):
            k = _rand(gen, 2, 3, 3, 3)
            return (lambda x: (F.conv2d(x, k, stride=stride, padding=1) ** 2).mean()), _rand(gen, 1, 3, 8, 8)
        return build

    def matmul(gen):
        b = _rand(gen, 5, 3)
        return (lambda x: ((x @ b) ** 2).sum()), _rand(gen, 4, 5)

    def softmax_axis(gen):
        w = _rand(gen, 3, 6)
        return (lambda x: (torch.softmax(x, dim=1) * w).sum()), _rand(gen, 3, 6)

    def softmax_window(gen):
        w = _rand(gen, 8, 8)
        return (lambda x: (window_softmax(x, 4) * w).sum()), _rand(gen, 8, 8)

    def upsample(gen):
        w = _rand(gen, 1, 2, 8, 8)
        return (lambda x: (upsample_nearest(x, 2) * w).sum()), _rand(gen, 1, 2, 4, 4)

    def sample_map(gen):
        coords = torch.tensor([[1.3, 2.6], [4.7, 0.2], [6.5, 6.9]], dtype=DTYPE)
        w = _rand(gen, 3, 2)
        return (lambda x: (bilinear_sample(x, coords) * w).sum()), _rand(gen, 2, 8, 8)

    def sample_coords(gen):
        fmap = _rand(gen, 2, 8, 8)
        return (lambda q: (bilinear_sample(fmap, q) ** 2).sum()), torch.tensor(
            [[1.3, 2.6], [4.7, 0.2], [6.5, 5.9]], dtype=DTYPE)

    def reshape_cat_slice(gen):
        b = _rand(gen, 2, 6)
        return (lambda x: (torch.cat([x.reshape(2, 6), b], 0)[1:3, 2:5] ** 2).sum()), _rand(gen, 3, 4)

    def norm(gen):
        return (lambda x: torch.linalg.norm(x, dim=1).sum()), _rand(gen, 4, 3)

    return [
        Check("add", PRIMITIVE_TOL, binary(lambda x, b: (x + b) ** 2)),
        Check("sub", PRIMITIVE_TOL, binary(lambda x, b: (x - b) ** 2)),
        Check("mul", PRIMITIVE_TOL, binary(lambda x, b: x * b * x)),
        Check("div", PRIMITIVE_TOL, binary(lambda x, b: x / b + b / (x + 2.0))),
        Check("scalar_ops", PRIMITIVE_TOL, lambda g: ((lambda x: ((3.0 * x - 0.5) ** 2 / 2.0).sum()), _rand(g, 6))),
        Check("matmul", PRIMITIVE_TOL, matmul),
        Check("conv2d_stride1", PRIMITIVE_TOL, conv(1)),
        Check("conv2d_stride2", PRIMITIVE_TOL, conv(2)),
        Check("upsample_nearest", PRIMITIVE_TOL, upsample),
        Check("relu", PRIMITIVE_TOL, lambda g: ((lambda x: (F.relu(x) ** 2).sum()), _away_from_zero(g, 10))),
        Check("exp", PRIMITIVE_TOL, lambda g: ((lambda x: torch.exp(x).sum()), _rand(g, 6))),
        Check("log", PRIMITIVE_TOL, lambda g: ((lambda x: torch.log(x).sum()), _rand(g, 6, lo=0.5, hi=2.0))),
        Check("sum_mean", PRIMITIVE_TOL, lambda g: ((lambda x: x.sum() * x.mean()), _rand(g, 3, 4))),
        Check("softmax_axis", PRIMITIVE_TOL, softmax_axis),
        Check("softmax_window", PRIMITIVE_TOL, softmax_window),
        Check("bilinear_map", PRIMITIVE_TOL, sample_map),
        Check("bilinear_coords", PRIMITIVE_TOL, sample_coords),
        Check("reshape_cat_slice", PRIMITIVE_TOL, reshape_cat_slice),
        Check("sqrt", PRIMITIVE_TOL, lambda g: ((lambda x: torch.sqrt(x).sum()), _rand(g, 6, lo=0.5, hi=2.0))),
        Check("l2_norm", PRIMITIVE_TOL, norm),
    ]


def _camera(size: int = 16) -> StereoCamera:
    return StereoCamera(fu=20.0, fv=20.0, cu=size / 2, cv=size / 2, b=0.2, width=size, height=size)


def _losses() -> list[Check]:
    def stereo(gen):
        cam = _camera()
        return (lambda p: (backproject(project(p, cam) * 1.01, cam) ** 2).sum()), torch.stack(
            [_rand(gen, 4), _rand(gen, 4), _rand(gen, 4, lo=2.0, hi=5.0)], dim=1)

    def content(gen):
        phi = LossNetwork(seed=int(torch.randint(0, 2 ** 31, (1,), generator=gen)))
        y_t = _rand(gen, 3, 16, 16, lo=0.0, hi=1.0)
        return (lambda x: content_loss(x, y_t, phi)), _rand(gen, 3, 16, 16, lo=0.0, hi=1.0)

    def style(gen):
        seed = int(torch.randint(0, 2 ** 31, (1,), generator=gen))
        net = TransformNetwork(seed=seed, width=8, n_res=1)
        phi = LossNetwork(seed=seed + 1)
        y_s = _rand(gen, 3, 16, 16, lo=0.0, hi=1.0)
        return (lambda x: style_loss(net(x)[0], y_s, phi)), _rand(gen, 3, 16, 16, lo=0.0, hi=1.0)

    def keypoints(gen):
        net = FeatureNetwork(seed=int(torch.randint(0, 2 ** 31, (1,), generator=gen)))
        return (lambda x: detect(x, net).keypoints.mean()), _rand(gen, 3, CELL, CELL, lo=0.0, hi=1.0)

    def keypoint(gen):
        # soft match -> backprojection -> keypoint loss, w.r.t. target descriptors
        cam = _camera()
        dim = 6
        src = FeatureSet(_rand(gen, 4, 2, lo=2.0, hi=13.0), _rand(gen, 4, lo=0.1, hi=0.9),
                         _rand(gen, dim, 16, 16), torch.full((16, 16), 1 / 256, dtype=DTYPE),
                         torch.zeros(16, 16, dtype=DTYPE))
        disp = torch.full((16, 16), 2.0, dtype=DTYPE)
        T = SE3Pose(torch.as_tensor(rot_y(0.1), dtype=DTYPE), torch.tensor([0.1, 0.0, 0.2], dtype=DTYPE))
        cfg = MatcherConfig(tau=5.0, stride=1)

        def f(dt):
            tgt = FeatureSet(src.keypoints, src.scores, dt, src.dense_scores, src.detector_logits)
            return keypoint_loss(match(src, tgt, disp, disp, cam, cfg), T)
        return f, _rand(gen, dim, 16, 16)

    return [
        Check("stereo_roundtrip", LOSS_TOL, stereo),
        Check("content_loss", LOSS_TOL, content),
        Check("style_loss_transform", LOSS_TOL, style),
        Check("featnet_keypoints", LOSS_TOL, keypoints),
        Check("keypoint_loss_match", LOSS_TOL, keypoint),
    ]


def _pose() -> list[Check]:
    def build(gen):
        p_s = _rand(gen, 5, 3, lo=-2.0, hi=2.0)
        w = _rand(gen, 5, lo=0.2, hi=1.0)
        C = torch.as_tensor(rot_z(0.3) @ rot_y(-0.2), dtype=DTYPE)
        T = SE3Pose(C, torch.tensor([0.5, -0.1, 0.3], dtype=DTYPE))
        p_t0 = T.apply(p_s) + 0.05 * _rand(gen, 5, 3)
        # matches are perturbed so the loss is not at its minimum
        T_ref = SE3Pose(torch.eye(3, dtype=DTYPE), torch.zeros(3, dtype=DTYPE))
        return (lambda p_t: pose_loss(solve_pose(p_s=p_s, p_t=p_t, w=w), T_ref, 1.0)), p_t0

    return [Check("pose_loss_solve_pose", POSE_TOL, build)]


def all_checks() -> list[Check]:
    return _primitives() + _losses() + _pose()


def run_suite(seed: int = 0, checks: list[Check] | None = None, eps: float = 1e-6) -> list[CheckResult]:
    results = []
    for k, check in enumerate(checks or all_checks()):
        gen = torch.Generator().manual_seed(int(seed) * 1000 + k)
        f, x = check.build(gen)
        try:
            err = grad_check(f, x, eps)
            results.append(CheckResult(check.name, err, check.tol))
        except GradCheckError as exc:
            results.append(CheckResult(check.name, float("inf"), check.tol, str(exc)))
    return results


def format_results(results: list[CheckResult], elapsed: float | None = None) -> str:
    lines = [f"{'PASS' if r.passed else 'FAIL'} {r.name:24s} err={r.error:.3e} tol={r.tol:.0e} {r.message}".rstrip()
             for r in results]
    if elapsed is not None:
        lines.append(f"{sum(r.passed for r in results)}/{len(results)} passed in {elapsed:.1f}s")
    return "\n".join(lines)


def main(seed: int = 0) -> tuple[bool, str]:
    t0 = time.perf_counter()
    res = run_suite(seed)
    return all(r.passed for r in res), format_results(res, time.perf_counter() - t0)
