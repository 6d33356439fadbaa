import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from styleloc.diffcore import DTYPE, ContractError, grad_check
from styleloc.featnet import (DESCRIPTOR_DIM, FeatureNetwork, cell_keypoints, detect, detect_batch,
                              spatial_softmax_scores)


def test_uniform_logits_give_cell_centre():
    kp = cell_keypoints(torch.zeros(16, 16, dtype=DTYPE))
    assert kp.tolist() == [[7.5, 7.5]]


def test_spike_logit_selects_pixel():
    z = torch.zeros(16, 16, dtype=DTYPE)
    z[12, 3] = 100.0
    assert torch.allclose(cell_keypoints(z), torch.tensor([[3.0, 12.0]], dtype=DTYPE), atol=1e-3)


def test_cells_are_row_major_with_offsets():
    z = torch.zeros(32, 48, dtype=DTYPE)
    kp = cell_keypoints(z)
    assert kp.shape == (6, 2)
    assert kp[1].tolist() == [23.5, 7.5] and kp[3].tolist() == [7.5, 23.5]


def test_detect_shapes():
    img = torch.rand(3, 64, 96, generator=torch.Generator().manual_seed(0), dtype=DTYPE)
    fs = detect(img, FeatureNetwork(seed=0))
    assert fs.n == 24
    assert fs.keypoints.shape == (24, 2) and fs.scores.shape == (24,)
    assert fs.dense_descriptors.shape == (DESCRIPTOR_DIM, 64, 96) == (176, 64, 96)
    assert fs.dense_scores.shape == (64, 96)


def test_detect_batch_matches_single():
    g = torch.Generator().manual_seed(1)
    imgs = torch.rand(2, 3, 32, 32, generator=g, dtype=DTYPE)
    net = FeatureNetwork(seed=2)
    batch = detect_batch(imgs, net)
    one = detect(imgs[1], net)
    assert torch.allclose(batch[1].keypoints, one.keypoints, atol=1e-12)
    assert torch.allclose(batch[1].scores, one.scores, atol=1e-12)


def test_score_softmax():
    s = spatial_softmax_scores(torch.full((32, 32), 3.0, dtype=DTYPE))
    assert torch.allclose(s, torch.full_like(s, 1 / 256), atol=1e-15)
    z = torch.randn(32, 48, generator=torch.Generator().manual_seed(0), dtype=DTYPE) * 5
    p = spatial_softmax_scores(z)
    sums = p.reshape(2, 16, 3, 16).sum(dim=(1, 3))
    assert (sums - 1).abs().max() < 1e-12
    assert torch.allclose(spatial_softmax_scores(z + 7.0), p, atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (32, 32), elements=st.floats(-50, 50)))
def test_keypoints_stay_inside_their_cell(logits):
    kp = cell_keypoints(torch.from_numpy(logits)).numpy()
    lo = np.array([[0, 0], [16, 0], [0, 16], [16, 16]], float)
    assert np.all(kp >= lo - 1e-9) and np.all(kp <= lo + 15 + 1e-9)


def test_rejects_indivisible_sizes():
    with pytest.raises(ContractError):
        cell_keypoints(torch.zeros(20, 16, dtype=DTYPE))
    with pytest.raises(ContractError):
        FeatureNetwork()(torch.zeros(3, 24, 32, dtype=DTYPE))


def test_deterministic_init():
    img = torch.rand(3, 32, 32, generator=torch.Generator().manual_seed(0), dtype=DTYPE)
    a, b = detect(img, FeatureNetwork(seed=4)), detect(img, FeatureNetwork(seed=4))
    assert torch.equal(a.keypoints, b.keypoints) and torch.equal(a.dense_descriptors, b.dense_descriptors)


def test_keypoint_gradient_wrt_image():
    net = FeatureNetwork(seed=0)
    img = torch.rand(3, 16, 16, generator=torch.Generator().manual_seed(3), dtype=DTYPE)
    assert grad_check(lambda t: detect(t, net).keypoints.mean() + detect(t, net).scores.sum(), img) < 1e-4
