"""Keypoint / score / dense-descriptor network.

The image is tiled into 16x16 cells.  Each cell yields one sub-pixel keypoint
as the softmax-weighted mean of its pixel coordinates under the detector
logits.  The score branch is softmaxed per cell and sampled bilinearly at
the keypoint.  Dense descriptors are the four encoder stages upsampled
(nearest) to full resolution and concatenated: 16 + 32 + 64 + 64 = 176.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .diffcore import DTYPE, ContractError, bilinear_sample, upsample_nearest, window_softmax
from .transnet import _conv, as_batch, kaiming_init

CELL = 16
ENCODER_CHANNELS = (16, 32, 64, 64)
DESCRIPTOR_DIM = sum(ENCODER_CHANNELS)


class _Decoder(nn.Module):
    """Per-stage 1x1 projections, upsampled and summed, then a 3x3 head."""

    def __init__(self, hidden: int = 8):
        super().__init__()
        self.lateral = nn.ModuleList(_conv(c, hidden, k=1) for c in ENCODER_CHANNELS)
        self.head = _conv(hidden, 1)

    def forward(self, stages):
        acc = 0.0
        for k, (lat, s) in enumerate(zip(self.lateral, stages)):
            acc = acc + upsample_nearest(lat(s), 2 ** k)
        return self.head(F.relu(acc))[:, 0]


class FeatureNetwork(nn.Module):
    def __init__(self, seed: int = 0):
        super().__init__()
        # stage 0 is a single full-resolution conv; later stages downsample then refine
        stages = []
        cin = 3
        for i, cout in enumerate(ENCODER_CHANNELS):
            if i == 0:
                stages.append(nn.Sequential(_conv(cin, cout), nn.ReLU()))
            else:
                stages.append(nn.Sequential(_conv(cin, cout, stride=2), nn.ReLU(), _conv(cout, cout), nn.ReLU()))
            cin = cout
        self.encoder = nn.ModuleList(stages)
        self.detector = _Decoder()
        self.scorer = _Decoder()
        kaiming_init(self, torch.Generator().manual_seed(int(seed)))

    def forward(self, images: torch.Tensor) -> dict:
        x = as_batch(images)
        h, w = x.shape[-2:]
        if h % CELL or w % CELL:
            raise ContractError(f"image size {h}x{w} must be divisible by {CELL}")
        stages = []
        e = x - 0.5
        for stage in self.encoder:
            e = stage(e)
            stages.append(e)
        return {
            "stages": stages,
            "detector_logits": self.detector(stages),
            "score_logits": self.scorer(stages),
        }


@dataclass
class FeatureSet:
    keypoints: torch.Tensor          # N x 2, (u, v) pixels
    scores: torch.Tensor             # N
    dense_descriptors: torch.Tensor  # D x H x W
    dense_scores: torch.Tensor       # H x W
    detector_logits: torch.Tensor    # H x W

    @property
    def n(self) -> int:
        return self.keypoints.shape[0]


def _cell_coords(cell: int) -> tuple[torch.Tensor, torch.Tensor]:
    r = torch.arange(cell, dtype=DTYPE)
    vv, uu = torch.meshgrid(r, r, indexing="ij")
    return uu.reshape(-1), vv.reshape(-1)


def cell_keypoints(logits: torch.Tensor, cell: int = CELL) -> torch.Tensor:
    """Softmax-expected pixel coordinate per cell of an ``H x W`` logit map.

    Cells are ordered row-major; returns ``N x 2`` as ``(u, v)``.
    """
    h, w = logits.shape
    if h % cell or w % cell:
        raise ContractError(f"logit map {h}x{w} not divisible by cell {cell}")
    gh, gw = h // cell, w // cell
    x = logits.reshape(gh, cell, gw, cell).permute(0, 2, 1, 3).reshape(gh * gw, cell * cell)
    p = torch.softmax(x, dim=-1)
    du, dv = _cell_coords(cell)
    cu = (torch.arange(gw, dtype=DTYPE) * cell).repeat(gh)
    cv = (torch.arange(gh, dtype=DTYPE) * cell).repeat_interleave(gw)
    u = cu + p @ du
    v = cv + p @ dv
    return torch.stack([u, v], dim=-1)


def spatial_softmax_scores(logits: torch.Tensor, cell: int = CELL) -> torch.Tensor:
    return window_softmax(logits, cell)


def features_from_outputs(out: dict, index: int = 0) -> FeatureSet:
    stages = [s[index:index + 1] for s in out["stages"]]
    dense = torch.cat([upsample_nearest(s, 2 ** k) for k, s in enumerate(stages)], dim=1)[0]
    det = out["detector_logits"][index]
    dense_scores = spatial_softmax_scores(out["score_logits"][index])
    kp = cell_keypoints(det)
    scores = bilinear_sample(dense_scores, kp)
    return FeatureSet(kp, scores, dense, dense_scores, det)


def detect(image: torch.Tensor, net: FeatureNetwork) -> FeatureSet:
    return features_from_outputs(net(as_batch(image)), 0)


def detect_batch(images: torch.Tensor, net: FeatureNetwork) -> list[FeatureSet]:
    out = net(images)
    return [features_from_outputs(out, i) for i in range(images.shape[0])]
