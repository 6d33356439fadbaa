"""Rigid transforms ``T = (C, r)`` acting as ``p -> C p + r``."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .diffcore import DTYPE


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=np.float64)


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=np.float64)


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64)


def rotation_angle(C) -> float:
    """Geodesic angle (rad) of a rotation matrix."""
    C = np.asarray(C.detach() if isinstance(C, torch.Tensor) else C, dtype=np.float64)
    c = (np.trace(C) - 1.0) / 2.0
    return float(math.acos(min(1.0, max(-1.0, c))))


@dataclass
class SE3Pose:
    C: torch.Tensor
    r: torch.Tensor

    def __post_init__(self):
        self.C = torch.as_tensor(self.C, dtype=DTYPE)
        self.r = torch.as_tensor(self.r, dtype=DTYPE).reshape(3)

    @classmethod
    def identity(cls) -> "SE3Pose":
        return cls(torch.eye(3, dtype=DTYPE), torch.zeros(3, dtype=DTYPE))

    @classmethod
    def from_matrix(cls, T) -> "SE3Pose":
        T = torch.as_tensor(np.asarray(T, dtype=np.float64))
        return cls(T[:3, :3].clone(), T[:3, 3].clone())

    def matrix(self) -> torch.Tensor:
        T = torch.eye(4, dtype=DTYPE)
        T[:3, :3] = self.C.detach()
        T[:3, 3] = self.r.detach()
        return T

    def apply(self, p: torch.Tensor) -> torch.Tensor:
        return p @ self.C.transpose(-1, -2) + self.r

    def compose(self, other: "SE3Pose") -> "SE3Pose":
        """``self @ other``: apply ``other`` first."""
        return SE3Pose(self.C @ other.C, self.C @ other.r + self.r)

    def inverse(self) -> "SE3Pose":
        Ct = self.C.transpose(-1, -2)
        return SE3Pose(Ct, -(Ct @ self.r))

    def detach(self) -> "SE3Pose":
        return SE3Pose(self.C.detach().clone(), self.r.detach().clone())

    def is_valid(self, tol: float = 1e-9) -> bool:
        C = self.C.detach()
        ortho = torch.linalg.norm(C.T @ C - torch.eye(3, dtype=DTYPE)).item()
        return ortho < tol and abs(torch.linalg.det(C).item() - 1.0) < tol

    def to_dict(self) -> dict:
        return {
            "C": [float(x) for x in self.C.detach().reshape(-1)],
            "r": [float(x) for x in self.r.detach()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SE3Pose":
        return cls(torch.tensor(d["C"], dtype=DTYPE).reshape(3, 3), torch.tensor(d["r"], dtype=DTYPE))
