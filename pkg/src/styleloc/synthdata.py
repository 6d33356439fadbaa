"""Synthetic day/night stereo pairs with ground-truth relative pose.

The scene is a closed room of textured quads (ground, walls, ceiling) with
free-standing textured billboards inside.  Each quad carries a grid of
albedo texels; texel centres are the scene's "points".  Frames are rendered
by casting one ray per pixel centre against every quad with a depth test,
so the disparity channel ``f_u * b / z`` is exact and dense.  Colour is
averaged over a 2x2 sub-pixel pattern.

Camera and world frames share the convention x right, y down, z forward;
yaw is rotation about y.

On-disk layout (``format_version`` 1)::

    manifest.json                 format version, camera, image size, seed,
                                  generator settings, split lists
    pairs/<pair_id>/src.ppm       day image, binary P6, 8 bit
    pairs/<pair_id>/tgt.ppm       night image
    pairs/<pair_id>/src_disp.bin  16-byte header (8-byte magic, uint32 H,
    pairs/<pair_id>/tgt_disp.bin  uint32 W, little endian) + row-major LE float32
    pairs/<pair_id>/pose.json     {"C": 9 floats row-major, "r": 3 floats,
                                   "convention": ...}
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .diffcore import DTYPE
from .se3 import SE3Pose, rot_x, rot_y, rot_z, rotation_angle
from .stereocam import D_MIN, StereoCamera

FORMAT_VERSION = 1
DISP_MAGIC = b"SLDISP01"
POSE_CONVENTION = "T_ts maps source-frame points to target frame: p_t = C p_s + r"
MIN_VISIBLE_POINTS = 50
MIN_POINT_DEPTH = 0.5


class FrameRejected(RuntimeError):
    pass


class DatasetIOError(IOError):
    pass


# --- scene ----------------------------------------------------------------


@dataclass
class Quad:
    origin: np.ndarray   # corner, world frame
    axis1: np.ndarray    # unit edge direction
    axis2: np.ndarray    # unit edge direction, orthogonal to axis1
    len1: float
    len2: float
    albedo: np.ndarray   # n1 x n2 x 3

    @property
    def normal(self) -> np.ndarray:
        return np.cross(self.axis1, self.axis2)

    def texel_centers(self) -> np.ndarray:
        n1, n2 = self.albedo.shape[:2]
        s1 = (np.arange(n1) + 0.5) * self.len1 / n1
        s2 = (np.arange(n2) + 0.5) * self.len2 / n2
        g1, g2 = np.meshgrid(s1, s2, indexing="ij")
        return (self.origin + g1[..., None] * self.axis1 + g2[..., None] * self.axis2).reshape(-1, 3)


@dataclass
class Scene:
    seed: int
    quads: list[Quad]
    lamps: np.ndarray        # K x 3 world positions
    lamp_radius: np.ndarray  # K
    sun: np.ndarray          # unit direction

    @property
    def n_points(self) -> int:
        return int(sum(q.albedo.shape[0] * q.albedo.shape[1] for q in self.quads))

    def points(self) -> np.ndarray:
        return np.concatenate([q.texel_centers() for q in self.quads])


@dataclass
class SceneConfig:
    half_width: float = 10.0
    z_near: float = -3.0
    z_far: float = 17.0
    ground_y: float = 1.6
    height: float = 10.0
    n_billboards: tuple[int, int] = (6, 10)
    n_lamps: int = 3
    min_points: int = 500
    max_points: int = 5000


def _texture(rng: np.random.Generator, n1: int, n2: int) -> np.ndarray:
    base = rng.uniform(0.4, 1.0, 3)
    tex = base * rng.uniform(0.3, 1.2, (n1, n2, 1)) + rng.normal(0.0, 0.08, (n1, n2, 3))
    return np.clip(tex, 0.03, 1.0)


def _quad(rng, origin, a1, a2, len1, len2, texel) -> Quad:
    a1 = np.asarray(a1, float) / np.linalg.norm(a1)
    a2 = np.asarray(a2, float) / np.linalg.norm(a2)
    n1 = max(1, int(round(len1 / texel)))
    n2 = max(1, int(round(len2 / texel)))
    return Quad(np.asarray(origin, float), a1, a2, float(len1), float(len2), _texture(rng, n1, n2))


def generate_scene(seed: int, cfg: SceneConfig | None = None) -> Scene:
    cfg = cfg or SceneConfig()
    rng = np.random.default_rng([int(seed), 0x5CE])
    hw, zn, zf, gy, ht = cfg.half_width, cfg.z_near, cfg.z_far, cfg.ground_y, cfg.height
    top = gy - ht
    depth = zf - zn
    ex, ey, ez = np.eye(3)
    quads = [
        _quad(rng, [-hw, gy, zn], ex, ez, 2 * hw, depth, 0.7),       # ground
        _quad(rng, [-hw, top, zn], ex, ez, 2 * hw, depth, 1.5),      # ceiling
        _quad(rng, [-hw, top, zf], ex, ey, 2 * hw, ht, 0.6),         # back wall
        _quad(rng, [-hw, top, zn], ez, ey, depth, ht, 0.8),          # left wall
        _quad(rng, [hw, top, zn], ez, ey, depth, ht, 0.8),           # right wall
        _quad(rng, [-hw, top, zn], ex, ey, 2 * hw, ht, 1.5),         # wall behind start
    ]
    nb = int(rng.integers(cfg.n_billboards[0], cfg.n_billboards[1] + 1))
    for _ in range(nb):
        w = rng.uniform(1.0, 3.5)
        h = rng.uniform(1.5, 4.0)
        yaw = rng.uniform(-0.7, 0.7)
        cx, cz = rng.uniform(-7.0, 7.0), rng.uniform(6.0, 14.0)
        a1 = np.array([math.cos(yaw), 0.0, -math.sin(yaw)])
        origin = np.array([cx, gy - h, cz]) - 0.5 * w * a1
        quads.append(_quad(rng, origin, a1, ey, w, h, rng.uniform(0.3, 0.5)))
    lamps = np.stack([rng.uniform(-7, 7, cfg.n_lamps), rng.uniform(-2.5, 0.5, cfg.n_lamps),
                      rng.uniform(4, 15, cfg.n_lamps)], axis=1)
    sun = np.array([0.4, 0.8, 0.45])
    scene = Scene(int(seed), quads, lamps, rng.uniform(1.5, 3.0, cfg.n_lamps), sun / np.linalg.norm(sun))
    if not cfg.min_points <= scene.n_points <= cfg.max_points:
        raise ValueError(f"scene has {scene.n_points} points, outside [{cfg.min_points}, {cfg.max_points}]")
    return scene


# --- lighting & rendering ---------------------------------------------------


@dataclass
class Lighting:
    kind: str = "day"                      # "day" | "night"
    gain: float = 1.0
    tint: tuple = (1.0, 1.0, 1.0)
    noise_sigma: float = 0.0
    lamp_power: tuple = ()                 # one entry per scene lamp; 0 = off
    noise_seed: int = 0

    @classmethod
    def day(cls) -> "Lighting":
        return cls()

    @classmethod
    def sample_night(cls, rng: np.random.Generator, n_lamps: int) -> "Lighting":
        tint = 1.0 + rng.uniform(-0.25, 0.25, 3)
        tint = tint / tint.mean()
        power = np.zeros(n_lamps)
        on = rng.choice(n_lamps, size=int(rng.integers(1, min(3, n_lamps) + 1)), replace=False)
        power[on] = rng.uniform(0.6, 1.2, on.size)
        return cls("night", float(rng.uniform(0.1, 0.3)), tuple(float(t) for t in tint),
                   float(rng.uniform(0.01, 0.05)), tuple(float(p) for p in power),
                   int(rng.integers(2 ** 31)))


@dataclass
class RenderResult:
    rgb: np.ndarray        # H x W x 3 in [0, 1]
    disparity: np.ndarray  # H x W, 0 where nothing is hit
    surface: np.ndarray    # H x W quad index, -1 where nothing is hit


def _sample_albedo(q: Quad, s1: np.ndarray, s2: np.ndarray) -> np.ndarray:
    """Bilinear interpolation between texel centres (clamped at the quad border)."""
    n1, n2 = q.albedo.shape[:2]
    x1 = np.clip(s1 / q.len1 * n1 - 0.5, 0.0, n1 - 1)
    x2 = np.clip(s2 / q.len2 * n2 - 0.5, 0.0, n2 - 1)
    i1 = np.minimum(np.floor(x1).astype(np.int64), max(n1 - 2, 0))
    i2 = np.minimum(np.floor(x2).astype(np.int64), max(n2 - 2, 0))
    f1 = (x1 - i1)[:, None]
    f2 = (x2 - i2)[:, None]
    j1 = np.minimum(i1 + 1, n1 - 1)
    j2 = np.minimum(i2 + 1, n2 - 1)
    a = q.albedo
    return ((1 - f1) * (1 - f2) * a[i1, i2] + f1 * (1 - f2) * a[j1, i2]
            + (1 - f1) * f2 * a[i1, j2] + f1 * f2 * a[j1, j2])


def _cast(scene: Scene, origin: np.ndarray, dirs: np.ndarray):
    """Nearest hit per ray: (t, quad id, hit point, albedo)."""
    n = dirs.shape[0]
    best_t = np.full(n, np.inf)
    best_q = np.full(n, -1, dtype=np.int64)
    albedo = np.zeros((n, 3))
    for qi, q in enumerate(scene.quads):
        nrm = q.normal
        denom = dirs @ nrm
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((q.origin - origin) @ nrm) / denom
        ok = np.isfinite(t) & (t > 1e-6) & (t < best_t)
        if not ok.any():
            continue
        x = origin + t[ok, None] * dirs[ok] - q.origin
        s1 = x @ q.axis1
        s2 = x @ q.axis2
        inside = (s1 >= 0) & (s1 <= q.len1) & (s2 >= 0) & (s2 <= q.len2)
        idx = np.flatnonzero(ok)[inside]
        best_t[idx] = t[idx]
        best_q[idx] = qi
        albedo[idx] = _sample_albedo(q, s1[inside], s2[inside])
    pts = origin + np.where(np.isfinite(best_t), best_t, 0.0)[:, None] * dirs
    return best_t, best_q, pts, albedo


def _shade(scene: Scene, quad_ids: np.ndarray, pts: np.ndarray, albedo: np.ndarray, light: Lighting) -> np.ndarray:
    hit = quad_ids >= 0
    normals = np.stack([q.normal for q in scene.quads])
    lam = np.abs(normals[np.maximum(quad_ids, 0)] @ scene.sun)
    day = albedo * (0.6 + 0.4 * lam)[:, None]
    if light.kind == "day":
        return np.where(hit[:, None], day, 0.0)
    # night ambient is the dimmed, tinted day shading; lamps add on top
    out = day * light.gain * np.asarray(light.tint)
    for k, power in enumerate(light.lamp_power):
        if power <= 0:
            continue
        d2 = ((pts - scene.lamps[k]) ** 2).sum(axis=1)
        out = out + power * albedo * np.exp(-d2 / (2.0 * scene.lamp_radius[k] ** 2))[:, None]
    return np.where(hit[:, None], out, 0.0)


def _pixel_rays(cam: StereoCamera, du: float = 0.0, dv: float = 0.0) -> np.ndarray:
    v, u = np.meshgrid(np.arange(cam.height, dtype=float), np.arange(cam.width, dtype=float), indexing="ij")
    x = (u.reshape(-1) + du - cam.cu) / cam.fu
    y = (v.reshape(-1) + dv - cam.cv) / cam.fv
    return np.stack([x, y, np.ones_like(x)], axis=1)


def render(scene: Scene, pose: SE3Pose, cam: StereoCamera, lighting: Lighting | None = None,
           supersample: bool = True) -> RenderResult:
    """Render the left image and disparity from camera pose ``pose`` (camera -> world)."""
    lighting = lighting or Lighting.day()
    R = pose.C.detach().numpy()
    c = pose.r.detach().numpy()
    h, w = cam.height, cam.width

    rays = _pixel_rays(cam)
    t, qid, pts, alb = _cast(scene, c, rays @ R.T)
    # camera-frame rays have unit z component, so the ray parameter is the depth
    with np.errstate(divide="ignore"):
        disp = np.where(qid >= 0, cam.fu * cam.b / t, 0.0)

    offsets = [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)] if supersample else [(0.0, 0.0)]
    rgb = np.zeros((h * w, 3))
    for du, dv in offsets:
        _, q2, p2, a2 = _cast(scene, c, _pixel_rays(cam, du, dv) @ R.T)
        rgb += _shade(scene, q2, p2, a2, lighting)
    rgb /= len(offsets)
    if lighting.noise_sigma > 0:
        rgb += np.random.default_rng(lighting.noise_seed).normal(0.0, lighting.noise_sigma, rgb.shape)
    rgb = np.clip(rgb, 0.0, 1.0)
    return RenderResult(rgb.reshape(h, w, 3), disp.reshape(h, w), qid.reshape(h, w))


def visible_points(scene: Scene, pose: SE3Pose, cam: StereoCamera) -> int:
    """Texel centres in front of the camera (z > 0.5 m) projecting inside the image."""
    p = (scene.points() - pose.r.detach().numpy()) @ pose.C.detach().numpy()
    z = p[:, 2]
    ok = z > MIN_POINT_DEPTH
    u = cam.fu * p[ok, 0] / z[ok] + cam.cu
    v = cam.fv * p[ok, 1] / z[ok] + cam.cv
    return int(((u >= 0) & (u <= cam.width - 1) & (v >= 0) & (v <= cam.height - 1)).sum())


def quantize(rgb: np.ndarray) -> np.ndarray:
    return np.round(np.clip(rgb, 0, 1) * 255.0) / 255.0


# --- pairs ------------------------------------------------------------------


@dataclass
class FramePair:
    pair_id: str
    src: torch.Tensor        # 3 x H x W, day
    tgt: torch.Tensor        # 3 x H x W, night
    src_disp: torch.Tensor   # H x W
    tgt_disp: torch.Tensor   # H x W
    T_ts: SE3Pose
    camera: StereoCamera


@dataclass
class PoseSampling:
    src_x: float = 2.5
    src_y: float = 0.2
    src_z: tuple[float, float] = (-1.0, 2.0)
    src_yaw_deg: float = 20.0
    src_tilt_deg: float = 3.0
    rel_lateral: float = 0.5
    rel_vertical: float = 0.05
    rel_forward: float = 1.0
    rel_yaw_deg: float = 6.0
    rel_tilt_deg: float = 1.5
    max_translation: float = 2.0
    max_rotation_deg: float = 15.0


def _rotation(yaw, pitch, roll) -> np.ndarray:
    return rot_y(yaw) @ rot_x(pitch) @ rot_z(roll)


def sample_pose_pair(rng: np.random.Generator, ps: PoseSampling) -> tuple[SE3Pose, SE3Pose]:
    """Source camera pose in world and the target pose relative to it (target -> source)."""
    rad = math.radians
    R_ws = _rotation(rng.uniform(-1, 1) * rad(ps.src_yaw_deg), rng.uniform(-1, 1) * rad(ps.src_tilt_deg),
                     rng.uniform(-1, 1) * rad(ps.src_tilt_deg))
    c_ws = np.array([rng.uniform(-ps.src_x, ps.src_x), rng.uniform(-ps.src_y, ps.src_y), rng.uniform(*ps.src_z)])
    while True:
        t = np.array([rng.uniform(-ps.rel_lateral, ps.rel_lateral), rng.uniform(-ps.rel_vertical, ps.rel_vertical),
                      rng.uniform(-ps.rel_forward, ps.rel_forward)])
        R = _rotation(rng.uniform(-1, 1) * rad(ps.rel_yaw_deg), rng.uniform(-1, 1) * rad(ps.rel_tilt_deg),
                      rng.uniform(-1, 1) * rad(ps.rel_tilt_deg))
        if np.linalg.norm(t) <= ps.max_translation and rotation_angle(R) <= rad(ps.max_rotation_deg):
            break
    return SE3Pose(R_ws, c_ws), SE3Pose(R, t)


def make_pair(scene: Scene, cam: StereoCamera, rng: np.random.Generator, pair_id: str,
              sampling: PoseSampling | None = None, max_tries: int = 100,
              return_renders: bool = False):
    """Render one day(source)/night(target) pair; resamples poses that see too few points."""
    sampling = sampling or PoseSampling()
    for _ in range(max_tries):
        T_ws, T_st = sample_pose_pair(rng, sampling)
        T_wt = T_ws.compose(T_st)
        if min(visible_points(scene, T_ws, cam), visible_points(scene, T_wt, cam)) < MIN_VISIBLE_POINTS:
            continue
        night = Lighting.sample_night(rng, len(scene.lamps))
        day_r = render(scene, T_ws, cam, Lighting.day())
        night_r = render(scene, T_wt, cam, night)
        if (day_r.surface < 0).any() or (night_r.surface < 0).any():
            continue
        pair = FramePair(
            pair_id,
            _chw(quantize(day_r.rgb)),
            _chw(quantize(night_r.rgb)),
            torch.from_numpy(day_r.disparity.astype(np.float32).astype(np.float64)),
            torch.from_numpy(night_r.disparity.astype(np.float32).astype(np.float64)),
            T_st.inverse(),
            cam,
        )
        if return_renders:
            return pair, day_r, night_r
        return pair
    raise FrameRejected(f"{pair_id}: no valid pose after {max_tries} attempts")


def _chw(rgb: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(rgb.transpose(2, 0, 1))).to(DTYPE)


# --- geometric consistency oracle ------------------------------------------


def reprojection_errors(src_disp, tgt_disp, T_ts: SE3Pose, cam: StereoCamera,
                        src_surface=None, tgt_surface=None, rel_tol: float = 0.01) -> np.ndarray:
    """Round-trip pixel errors source -> target -> source over co-visible pixels.

    Each valid source pixel is lifted with its disparity, moved by ``T_ts`` and
    projected into the target; the target disparity sampled there lifts it
    again, and the point is mapped back into the source image.  A pixel is
    co-visible when its four target neighbours belong to the source pixel's
    surface (surface maps given) or, from stored data alone, when the sampled
    target disparity agrees with the predicted one within ``rel_tol``.
    """
    sd = np.asarray(src_disp, dtype=np.float64)
    td = np.asarray(tgt_disp, dtype=np.float64)
    h, w = sd.shape
    C = T_ts.C.detach().numpy()
    r = T_ts.r.detach().numpy()
    v, u = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
    u, v, d = u.reshape(-1), v.reshape(-1), sd.reshape(-1)
    ok = d > D_MIN
    u, v, d = u[ok], v[ok], d[ok]
    s = cam.b / d
    p = np.stack([s * (u - cam.cu), s * cam.fu / cam.fv * (v - cam.cv), s * cam.fu], axis=1)
    pt = p @ C.T + r
    front = pt[:, 2] > 1e-6
    pt, u, v = pt[front], u[front], v[front]
    ut = cam.fu * pt[:, 0] / pt[:, 2] + cam.cu
    vt = cam.fv * pt[:, 1] / pt[:, 2] + cam.cv
    dt = cam.fu * cam.b / pt[:, 2]
    inside = (ut >= 0) & (ut <= w - 1) & (vt >= 0) & (vt <= h - 1)
    ut, vt, dt, u, v = ut[inside], vt[inside], dt[inside], u[inside], v[inside]

    u0 = np.minimum(np.floor(ut), w - 2).astype(int)
    v0 = np.minimum(np.floor(vt), h - 2).astype(int)
    fu, fv = ut - u0, vt - v0
    nb = [(v0, u0), (v0, u0 + 1), (v0 + 1, u0), (v0 + 1, u0 + 1)]
    wts = [(1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv]
    dsamp = sum(wt * td[a, b] for (a, b), wt in zip(nb, wts))
    if src_surface is not None and tgt_surface is not None:
        sid = np.asarray(src_surface)[v.astype(int), u.astype(int)]
        covis = np.all([np.asarray(tgt_surface)[a, b] == sid for a, b in nb], axis=0)
    else:
        covis = np.abs(dsamp - dt) <= rel_tol * dt
    covis &= dsamp > D_MIN
    ut, vt, dsamp, u, v = ut[covis], vt[covis], dsamp[covis], u[covis], v[covis]

    s = cam.b / dsamp
    q = np.stack([s * (ut - cam.cu), s * cam.fu / cam.fv * (vt - cam.cv), s * cam.fu], axis=1)
    qs = (q - r) @ C
    ub = cam.fu * qs[:, 0] / qs[:, 2] + cam.cu
    vb = cam.fv * qs[:, 1] / qs[:, 2] + cam.cv
    return np.hypot(ub - u, vb - v)


# --- on-disk format -----------------------------------------------------------


def write_ppm(path, img: np.ndarray) -> None:
    """Write an ``H x W x 3`` float image in [0, 1] (or uint8) as binary P6."""
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        arr = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = arr.shape[:2]
    try:
        with open(path, "wb") as fh:
            fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
            fh.write(np.ascontiguousarray(arr).tobytes())
    except OSError as exc:
        raise DatasetIOError(f"cannot write {path}: {exc}") from exc


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 file into an ``H x W x 3`` float array in [0, 1]."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DatasetIOError(f"cannot read {path}: {exc}") from exc
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise DatasetIOError(f"{path}: only 8-bit binary P6 is supported")
    w, h = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos + 1)
    return pixels.reshape(h, w, 3).astype(np.float64) / 255.0


def write_disparity(path, disp: np.ndarray) -> None:
    disp = np.asarray(disp)
    h, w = disp.shape
    try:
        with open(path, "wb") as fh:
            fh.write(DISP_MAGIC + struct.pack("<II", h, w))
            fh.write(disp.astype("<f4").tobytes(order="C"))
    except OSError as exc:
        raise DatasetIOError(f"cannot write {path}: {exc}") from exc


def read_disparity(path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DatasetIOError(f"cannot read {path}: {exc}") from exc
    if data[:8] != DISP_MAGIC:
        raise DatasetIOError(f"{path}: bad disparity magic")
    h, w = struct.unpack("<II", data[8:16])
    if len(data) != 16 + 4 * h * w:
        raise DatasetIOError(f"{path}: size does not match {h}x{w} header")
    return np.frombuffer(data, dtype="<f4", offset=16).reshape(h, w).astype(np.float64)


def default_camera(height: int = 64, width: int = 96) -> StereoCamera:
    return StereoCamera(fu=100.0, fv=100.0, cu=width / 2, cv=height / 2, b=0.2, width=width, height=height)


@dataclass
class DataConfig:
    path: str = "data/synth"
    train: int = 200
    test: int = 40
    seed: int = 0
    height: int = 64
    width: int = 96
    camera: dict | None = None
    sampling: dict = field(default_factory=dict)

    def make_camera(self) -> StereoCamera:
        if self.camera:
            return StereoCamera.from_dict({**self.camera, "width": self.width, "height": self.height})
        return default_camera(self.height, self.width)

    def to_dict(self) -> dict:
        return asdict(self)


def save_pair(pair: FramePair, pair_dir) -> None:
    pair_dir = Path(pair_dir)
    try:
        pair_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetIOError(f"cannot create {pair_dir}: {exc}") from exc
    write_ppm(pair_dir / "src.ppm", pair.src.numpy().transpose(1, 2, 0))
    write_ppm(pair_dir / "tgt.ppm", pair.tgt.numpy().transpose(1, 2, 0))
    write_disparity(pair_dir / "src_disp.bin", pair.src_disp.numpy())
    write_disparity(pair_dir / "tgt_disp.bin", pair.tgt_disp.numpy())
    pose = {**pair.T_ts.to_dict(), "convention": POSE_CONVENTION}
    (pair_dir / "pose.json").write_text(json.dumps(pose, indent=2))


def generate_pairs(cfg: DataConfig, scene: Scene | None = None, return_renders: bool = False):
    """Yield ``(split, pair)`` for the configured splits, train first, deterministically."""
    cam = cfg.make_camera()
    scene = scene or generate_scene(cfg.seed)
    sampling = PoseSampling(**cfg.sampling)
    rng = np.random.default_rng([int(cfg.seed), 0xDA7A])
    for split, count in (("train", cfg.train), ("test", cfg.test)):
        for i in range(count):
            yield split, make_pair(scene, cam, rng, f"{split}_{i:05d}", sampling, return_renders=return_renders)


def build_dataset(cfg: DataConfig, out_dir=None) -> Path:
    out = Path(out_dir or cfg.path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetIOError(f"cannot create {out}: {exc}") from exc
    scene = generate_scene(cfg.seed)
    splits: dict[str, list[str]] = {"train": [], "test": []}
    for split, pair in generate_pairs(cfg, scene):
        save_pair(pair, out / "pairs" / pair.pair_id)
        splits[split].append(pair.pair_id)
    manifest = {
        "format_version": FORMAT_VERSION,
        "camera": cfg.make_camera().to_dict(),
        "image_size": [cfg.height, cfg.width],
        "seed": cfg.seed,
        "scene_points": scene.n_points,
        "generator": cfg.to_dict(),
        "splits": splits,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return out


class Dataset:
    """Read access to an on-disk dataset (synthetic or real data in the same layout)."""

    def __init__(self, root):
        self.root = Path(root)
        try:
            self.manifest = json.loads((self.root / "manifest.json").read_text())
        except OSError as exc:
            raise DatasetIOError(f"cannot read manifest in {self.root}: {exc}") from exc
        if self.manifest.get("format_version") != FORMAT_VERSION:
            raise DatasetIOError(f"{self.root}: unsupported format_version {self.manifest.get('format_version')}")
        self.camera = StereoCamera.from_dict(self.manifest["camera"])

    def split(self, name: str) -> list[str]:
        return list(self.manifest["splits"][name])

    def pair(self, pair_id: str) -> FramePair:
        d = self.root / "pairs" / pair_id
        try:
            pose = json.loads((d / "pose.json").read_text())
        except OSError as exc:
            raise DatasetIOError(f"cannot read {d / 'pose.json'}: {exc}") from exc
        return FramePair(
            pair_id,
            _chw(read_ppm(d / "src.ppm")),
            _chw(read_ppm(d / "tgt.ppm")),
            torch.from_numpy(read_disparity(d / "src_disp.bin")),
            torch.from_numpy(read_disparity(d / "tgt_disp.bin")),
            SE3Pose.from_dict(pose),
            self.camera,
        )

    def pairs(self, split: str, limit: int | None = None) -> list[FramePair]:
        ids = self.split(split)
        if limit is not None:
            ids = ids[:limit]
        return [self.pair(i) for i in ids]
