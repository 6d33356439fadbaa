"""Night-to-day image transform network and its perceptual losses.

``TransformNetwork`` is encoder / five residual blocks / decoder.  Its last
stage adds a 1x1-conv correction in logit space to the input image and
squashes with a sigmoid, so a zero-initialised correction passes the input
through unchanged.

``LossNetwork`` is a fixed 4-stage conv net (16/32/64/64 channels) with
seeded orthogonal weights.  Stage 3 is the content layer; all four stages
are used for the Gram-matrix style loss.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .diffcore import DTYPE, ContractError, freeze, upsample_nearest

LOSS_CHANNELS = (16, 32, 64, 64)
CONTENT_STAGE = 2
_LOGIT_EPS = 1e-4


def _conv(cin: int, cout: int, k: int = 3, stride: int = 1, padding_mode: str = "zeros") -> nn.Conv2d:
    return nn.Conv2d(cin, cout, k, stride=stride, padding=k // 2, padding_mode=padding_mode, dtype=DTYPE)


def kaiming_init(module: nn.Module, gen: torch.Generator, gain: float = 2.0 ** 0.5) -> None:
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen, dtype=DTYPE) * (gain / fan_in ** 0.5))
                if m.bias is not None:
                    m.bias.zero_()


def as_batch(img: torch.Tensor) -> torch.Tensor:
    if img.dim() == 3:
        return img.unsqueeze(0)
    if img.dim() == 4:
        return img
    raise ContractError(f"expected a 3xHxW image or a batch, got shape {tuple(img.shape)}")


class ResidualBlock(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.conv1 = _conv(ch, ch)
        self.conv2 = _conv(ch, ch)

    def forward(self, x):
        return x + self.conv2(F.relu(self.conv1(x)))


class TransformNetwork(nn.Module):
    def __init__(self, seed: int = 0, width: int = 32, n_res: int = 5):
        super().__init__()
        half = width // 2
        self.enc1 = _conv(3, half, stride=2)
        self.enc2 = _conv(half, width, stride=2)
        self.res = nn.Sequential(*[ResidualBlock(width) for _ in range(n_res)])
        self.dec1 = _conv(width, half)
        self.dec2 = _conv(half, half)
        self.out = _conv(half, 3, k=1)
        gen = torch.Generator().manual_seed(int(seed))
        kaiming_init(self, gen)
        # residual branches start small so the trunk stays well scaled
        with torch.no_grad():
            for blk in self.res:
                blk.conv2.weight.mul_(0.1)
            self.out.weight.zero_()
            self.out.bias.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = as_batch(x)
        h, w = x.shape[-2:]
        if h % 4 or w % 4:
            raise ContractError(f"image size {h}x{w} must be divisible by 4")
        e = F.relu(self.enc1(x - 0.5))
        e = F.relu(self.enc2(e))
        e = self.res(e)
        e = F.relu(self.dec1(upsample_nearest(e, 2)))
        e = F.relu(self.dec2(upsample_nearest(e, 2)))
        xc = x.clamp(_LOGIT_EPS, 1.0 - _LOGIT_EPS)
        return torch.sigmoid(torch.logit(xc) + self.out(e))


class LossNetwork(nn.Module):
    """Frozen feature extractor; parameters never take gradients."""

    def __init__(self, seed: int = 1234, channels=LOSS_CHANNELS):
        super().__init__()
        rng = np.random.default_rng(seed)
        stages = []
        cin = 3
        for i, cout in enumerate(channels):
            conv = _conv(cin, cout, stride=1 if i == 0 else 2, padding_mode="replicate")
            fan_in = cin * 9
            g = rng.standard_normal((max(fan_in, cout), min(fan_in, cout)))
            q, r = np.linalg.qr(g)
            q = q * np.sign(np.diag(r))
            wmat = q.T if cout <= fan_in else q
            with torch.no_grad():
                conv.weight.copy_(torch.from_numpy(np.sqrt(2.0) * wmat.reshape(cout, cin, 3, 3)))
                conv.bias.copy_(torch.from_numpy(rng.uniform(-0.1, 0.1, cout)))
            stages.append(conv)
            cin = cout
        self.stages = nn.ModuleList(stages)
        freeze(self)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        h = as_batch(x)
        for conv in self.stages:
            h = F.relu(conv(h))
            feats.append(h)
        return feats


def transform(y_t: torch.Tensor, net: TransformNetwork) -> torch.Tensor:
    out = net(y_t)
    return out[0] if y_t.dim() == 3 else out


def loss_features(y: torch.Tensor, phi: LossNetwork) -> list[torch.Tensor]:
    """Per-stage feature maps, each ``C_j x H_j x W_j`` for a single image."""
    feats = phi(y)
    return [f[0] for f in feats] if y.dim() == 3 else feats


def gram(feat: torch.Tensor) -> torch.Tensor:
    """``C x C`` Gram matrix of a ``C x H x W`` feature map."""
    c = feat.shape[-3]
    flat = feat.reshape(c, -1)
    return flat @ flat.t()


def _single(img: torch.Tensor) -> torch.Tensor:
    b = as_batch(img)
    if b.shape[0] != 1:
        raise ContractError("perceptual losses take one image at a time")
    return b


def content_loss(y_hat: torch.Tensor, y_t: torch.Tensor, phi: LossNetwork) -> torch.Tensor:
    if y_hat.shape[-3:] != y_t.shape[-3:]:
        raise ContractError(f"shape mismatch {tuple(y_hat.shape)} vs {tuple(y_t.shape)}")
    a = phi(_single(y_hat))[CONTENT_STAGE][0]
    b = phi(_single(y_t))[CONTENT_STAGE][0]
    return ((a - b) ** 2).sum() / a.numel()


def style_loss_from_features(feats_hat, feats_style) -> torch.Tensor:
    total = 0.0
    for fa, fb in zip(feats_hat, feats_style):
        ga = gram(fa) / fa.numel()
        gb = gram(fb) / fb.numel()
        total = total + torch.linalg.norm(ga - gb)
    return total


def style_loss(y_hat: torch.Tensor, y_s: torch.Tensor, phi: LossNetwork) -> torch.Tensor:
    """Sum over stages of the Frobenius norm of size-normalised Gram differences."""
    fa = [f[0] for f in phi(_single(y_hat))]
    fb = [f[0] for f in phi(_single(y_s))]
    return style_loss_from_features(fa, fb)
