import math

import numpy as np
import pytest
import torch

from oracles import horn_weighted_alignment, random_rotation
from styleloc.diffcore import DTYPE, grad_check
from styleloc.featnet import FeatureSet
from styleloc.matchpose import (DegenerateGeometryError, DegenerateMatchSetError, LocalizationFailure, MatcherConfig,
                                MatchSet, RansacConfig, keypoint_loss, match, pose_loss, ransac, reject_outliers_gt,
                                soft_match, solve_pose, weight, zncc)
from styleloc.se3 import SE3Pose, rot_y, rot_z
from styleloc.stereocam import StereoCamera

CAM = StereoCamera(fu=100, fv=100, cu=48, cv=32, b=0.2, width=96, height=64)


def matchset(p_s, p_t, w=None):
    p_s = torch.as_tensor(p_s, dtype=DTYPE)
    p_t = torch.as_tensor(p_t, dtype=DTYPE)
    n = p_s.shape[0]
    w = torch.ones(n, dtype=DTYPE) if w is None else torch.as_tensor(w, dtype=DTYPE)
    z2 = torch.zeros(n, 2, dtype=DTYPE)
    z4 = torch.zeros(n, 4, dtype=DTYPE)
    one = torch.ones(n, dtype=DTYPE)
    return MatchSet(z2, z2, p_s, p_t, z4, z4, one, one, w, torch.arange(n))


def random_points(rng, n):
    return np.column_stack([rng.uniform(-3, 3, n), rng.uniform(-2, 2, n), rng.uniform(2, 20, n)])


# ---- descriptors and soft matching ----

def test_zncc_values():
    a = torch.tensor([1.0, 2.0, 3.0, 4.0], dtype=DTYPE)
    assert zncc(a, 3 * a + 7).item() == pytest.approx(1.0, abs=1e-12)
    assert zncc(a, -a).item() == pytest.approx(-1.0, abs=1e-12)
    assert zncc(a, torch.tensor([1.0, -1.0, -1.0, 1.0], dtype=DTYPE)).item() == pytest.approx(0.0, abs=1e-12)
    assert zncc(a, torch.ones(4, dtype=DTYPE)).item() == 0.0  # flat descriptor: no NaN


def _shifted_maps(shift_u=5, shift_v=3, h=32, w=48, dim=16):
    g = torch.Generator().manual_seed(0)
    src = torch.randn(dim, h, w, generator=g, dtype=DTYPE)
    tgt = torch.roll(src, shifts=(shift_v, shift_u), dims=(1, 2))
    return src, tgt


def test_soft_match_recovers_shift():
    src, tgt = _shifted_maps()
    q_s = torch.tensor([[10.0, 8.0], [20.0, 15.0], [30.0, 20.0]], dtype=DTYPE)
    d_s = src[:, q_s[:, 1].long(), q_s[:, 0].long()].t()
    q_t = soft_match(d_s, tgt, tau=100.0, stride=1)
    assert (q_t - (q_s + torch.tensor([5.0, 3.0], dtype=DTYPE))).abs().max() < 0.5


def test_two_equal_matches_give_midpoint():
    tgt = torch.zeros(4, 4, 8, dtype=DTYPE)
    d = torch.tensor([1.0, -1.0, 2.0, 0.5], dtype=DTYPE)
    tgt[:, 1, 2] = d
    tgt[:, 3, 6] = d
    q = soft_match(d[None], tgt, tau=1000.0, stride=1)
    assert q[0].tolist() == pytest.approx([4.0, 2.0], abs=1e-9)


def test_small_tau_gives_grid_centroid():
    src, tgt = _shifted_maps(h=16, w=32)
    q = soft_match(src[:, 4, 4][None], tgt, tau=1e-12, stride=2)
    # stride-2 grid: u in {0..30}, v in {0..14}
    assert q[0].tolist() == pytest.approx([15.0, 7.0], abs=1e-9)


def test_soft_match_permutation_invariant():
    src, tgt = _shifted_maps(dim=8)
    d = src[:, [5, 9, 12], [7, 3, 30]].t()
    perm = torch.tensor([2, 0, 1])
    a = soft_match(d, tgt, 20.0, 2)
    b = soft_match(d[perm], tgt, 20.0, 2)
    assert torch.allclose(a[perm], b, atol=1e-12)


def test_weight_definition():
    g = torch.Generator().manual_seed(1)
    d_s, d_t = torch.randn(5, 6, generator=g, dtype=DTYPE), torch.randn(5, 6, generator=g, dtype=DTYPE)
    s_s, s_t = torch.rand(5, generator=g, dtype=DTYPE), torch.rand(5, generator=g, dtype=DTYPE)
    w = weight(d_s, d_t, s_s, s_t)
    assert torch.equal(w, 0.5 * (zncc(d_s, d_t) + 1.0) * s_s * s_t)
    assert (w >= 0).all()


def test_match_on_identical_images_lifts_consistent_points():
    src, _ = _shifted_maps(h=64, w=96)
    kp = torch.tensor([[10.0, 10.0], [40.0, 20.0], [70.0, 50.0], [85.0, 5.0]], dtype=DTYPE)
    fs = FeatureSet(kp, torch.ones(4, dtype=DTYPE), src, torch.full((64, 96), 1 / 256, dtype=DTYPE),
                    torch.zeros(64, 96, dtype=DTYPE))
    disp = torch.full((64, 96), 10.0, dtype=DTYPE)
    disp[:, :20] = 0.05  # too far: dropped
    m = match(fs, fs, disp, disp, CAM, MatcherConfig(tau=200.0, stride=1))
    assert m.index.tolist() == [1, 2, 3]
    assert (m.p_s - m.p_t).abs().max() < 1e-3
    assert torch.allclose(m.p_s[:, 2], torch.full((3,), 2.0, dtype=DTYPE))


# ---- outlier rejection ----

def test_gt_rejection():
    rng = np.random.default_rng(0)
    p = random_points(rng, 6)
    q = p.copy()
    q[2, 0] += 1.0
    m = matchset(p, q)
    kept = reject_outliers_gt(m, SE3Pose.identity(), 0.1)
    assert kept.index.tolist() == [0, 1, 3, 4, 5]
    assert len(reject_outliers_gt(m, SE3Pose.identity(), math.inf)) == 6
    with pytest.raises(DegenerateMatchSetError):
        reject_outliers_gt(m, SE3Pose(torch.eye(3), torch.tensor([5.0, 0, 0])), 0.1)


def test_ransac_finds_consistent_subset():
    rng = np.random.default_rng(2)
    C = rot_y(0.2)
    r = np.array([0.3, 0.0, -1.0])
    p = random_points(rng, 10)
    q = p @ C.T + r
    q[[1, 4, 8]] += rng.uniform(2, 4, (3, 3))
    kept = ransac(matchset(p, q), RansacConfig(iterations=200, seed=0))
    assert sorted(kept.index.tolist()) == [0, 2, 3, 5, 6, 7, 9]


def test_ransac_fails_without_consensus():
    rng = np.random.default_rng(3)
    with pytest.raises(LocalizationFailure):
        ransac(matchset(random_points(rng, 2), random_points(rng, 2)), RansacConfig())
    p = random_points(rng, 6)
    with pytest.raises(LocalizationFailure):
        ransac(matchset(p, random_points(rng, 6) * 10), RansacConfig(inlier_threshold=1e-3))


# ---- pose solver ----

def test_solve_pose_example():
    rng = np.random.default_rng(4)
    p = random_points(rng, 8)
    C = rot_z(math.pi / 2)
    T = solve_pose(matchset(p, p @ C.T + np.array([1.0, 0.0, 0.0])))
    assert np.abs(T.C.numpy() - C).max() < 1e-9
    assert np.abs(T.r.numpy() - [1.0, 0.0, 0.0]).max() < 1e-9


def test_solve_pose_returns_rotation():
    rng = np.random.default_rng(5)
    for _ in range(20):
        T = solve_pose(p_s=random_points(rng, 6), p_t=random_points(rng, 6), w=rng.uniform(0.1, 1, 6))
        assert T.is_valid(1e-9)


def test_solve_pose_matches_horn_oracle():
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(3, 30))
        p = random_points(rng, n)
        C = random_rotation(rng)
        q = p @ C.T + rng.uniform(-2, 2, 3) + rng.normal(0, 0.05, (n, 3))
        w = rng.uniform(0.01, 1.0, n)
        T = solve_pose(p_s=p, p_t=q, w=w)
        Co, ro = horn_weighted_alignment(p, q, w)
        worst = max(worst, np.abs(T.C.numpy() - Co).max(), np.abs(T.r.numpy() - ro).max())
    assert worst < 1e-9


def test_solve_pose_weight_scale_invariance():
    rng = np.random.default_rng(7)
    p, q, w = random_points(rng, 7), random_points(rng, 7), rng.uniform(0.1, 1, 7)
    a, b = solve_pose(p_s=p, p_t=q, w=w), solve_pose(p_s=p, p_t=q, w=w * 37.5)
    assert (a.C - b.C).abs().max() < 1e-12 and (a.r - b.r).abs().max() < 1e-12


def test_zero_weight_outlier_is_ignored():
    rng = np.random.default_rng(8)
    p = random_points(rng, 6)
    q = p @ rot_y(0.1).T + 0.5
    base = solve_pose(p_s=p, p_t=q, w=np.ones(6))
    p2 = np.vstack([p, [[0.0, 0.0, 5.0]]])
    q2 = np.vstack([q, [[90.0, -40.0, 3.0]]])
    with_out = solve_pose(p_s=p2, p_t=q2, w=np.r_[np.ones(6), 0.0])
    assert (base.C - with_out.C).abs().max() < 1e-12 and (base.r - with_out.r).abs().max() < 1e-12


@pytest.mark.parametrize("p_s, w", [
    (np.array([[0, 0, 1], [1, 0, 1]], float), np.ones(2)),                  # too few
    (np.array([[0, 0, 1], [1, 0, 1], [2, 0, 1], [3, 0, 1]], float), np.ones(4)),  # collinear
    (np.array([[0, 0, 1], [1, 0, 1], [0, 1, 1]], float), np.zeros(3)),     # no weight
])
def test_solve_pose_degenerate(p_s, w):
    with pytest.raises(DegenerateGeometryError):
        solve_pose(p_s=p_s, p_t=p_s, w=w)


def test_pose_loss_examples():
    I = SE3Pose.identity()
    assert pose_loss(I, I).item() == 0.0
    assert pose_loss(SE3Pose(torch.eye(3), torch.tensor([0.3, 0.0, 0.0], dtype=DTYPE)), I).item() == pytest.approx(0.09, abs=1e-12)
    assert pose_loss(SE3Pose(torch.from_numpy(rot_z(math.pi)), torch.zeros(3)), I).item() == pytest.approx(8.0, abs=1e-12)


def test_keypoint_loss_value():
    p = torch.tensor([[0.0, 0.0, 2.0], [1.0, 1.0, 3.0]], dtype=DTYPE)
    q = p + torch.tensor([[0.1, 0.0, 0.0], [0.0, 0.0, -0.2]], dtype=DTYPE)
    assert keypoint_loss(matchset(p, q), SE3Pose.identity()).item() == pytest.approx(0.05, abs=1e-12)
    T = SE3Pose(torch.eye(3), torch.tensor([0.0, 0.0, 1.0]))
    assert keypoint_loss(matchset(p, T.apply(p)), T).item() == 0.0


def test_pose_loss_gradient_through_solver():
    rng = np.random.default_rng(9)
    p = torch.from_numpy(random_points(rng, 6))
    q0 = p @ torch.from_numpy(rot_y(0.3)).T + torch.tensor([0.2, 0.0, -0.4], dtype=DTYPE)
    q0 = q0 + torch.from_numpy(rng.normal(0, 0.1, (6, 3)))
    w = torch.from_numpy(rng.uniform(0.2, 1, 6))
    T = SE3Pose(torch.from_numpy(rot_y(0.25)), torch.tensor([0.0, 0.1, -0.3], dtype=DTYPE))
    assert grad_check(lambda t: pose_loss(solve_pose(p_s=p, p_t=t, w=w), T), q0.clone()) < 1e-3
    assert grad_check(lambda t: pose_loss(solve_pose(p_s=p, p_t=q0, w=t), T), w.clone()) < 1e-3


def test_weight_examples():
    d = torch.tensor([1.0, 2.0, 3.0, 4.0], dtype=DTYPE)
    one, half = torch.tensor(1.0, dtype=DTYPE), torch.tensor(0.5, dtype=DTYPE)
    assert weight(d, 2 * d, one, one).item() == pytest.approx(1.0, abs=1e-12)
    assert weight(d, -d, one, one).item() == pytest.approx(0.0, abs=1e-12)
    orth = torch.tensor([1.0, -1.0, -1.0, 1.0], dtype=DTYPE)
    assert weight(d, orth, half, half).item() == pytest.approx(0.125, abs=1e-12)
