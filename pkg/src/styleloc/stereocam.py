"""Rectified stereo camera: 3D point <-> (u_l, v_l, disparity)."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch

from .diffcore import DTYPE

D_MIN = 0.1


class BehindCameraError(ValueError):
    pass


class NearInfiniteDepthError(ValueError):
    pass


@dataclass(frozen=True)
class StereoCamera:
    fu: float
    fv: float
    cu: float
    cv: float
    b: float
    width: int
    height: int

    def __post_init__(self):
        if self.fu <= 0 or self.fv <= 0 or self.b <= 0:
            raise ValueError("focal lengths and baseline must be positive")
        if not (0 <= self.cu < self.width and 0 <= self.cv < self.height):
            raise ValueError("principal point outside the image")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "StereoCamera":
        return cls(fu=float(d["fu"]), fv=float(d["fv"]), cu=float(d["cu"]), cv=float(d["cv"]),
                   b=float(d["b"]), width=int(d["width"]), height=int(d["height"]))


def project(p: torch.Tensor, cam: StereoCamera) -> torch.Tensor:
    """Map camera-frame points ``(..., 3)`` to observations ``(..., 3) = (u_l, v_l, d)``."""
    p = torch.as_tensor(p, dtype=DTYPE)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    if bool((z <= 0).any()):
        raise BehindCameraError("point with z <= 0 cannot be projected")
    u = cam.fu * x / z + cam.cu
    v = cam.fv * y / z + cam.cv
    d = cam.fu * cam.b / z
    return torch.stack([u, v, d], dim=-1)


def backproject(y: torch.Tensor, cam: StereoCamera, d_min: float = D_MIN) -> torch.Tensor:
    """Inverse of :func:`project`; rejects disparities at or below ``d_min``."""
    y = torch.as_tensor(y, dtype=DTYPE)
    u, v, d = y[..., 0], y[..., 1], y[..., 2]
    if bool((d <= d_min).any()):
        raise NearInfiniteDepthError(f"disparity <= d_min ({d_min} px)")
    s = cam.b / d
    x = s * (u - cam.cu)
    yy = s * (cam.fu / cam.fv) * (v - cam.cv)
    z = s * cam.fu
    return torch.stack([x, yy, z], dim=-1)
