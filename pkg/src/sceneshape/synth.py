"""Synthetic Manhattan rooms with exact ground truth, and distortion synthesis.

World frame: X east, Y north, Z up.  The room is the axis-aligned box
``[0, Lx] x [0, Ly] x [0, Lz]`` and the camera looks roughly along +Y.
Boxes sit on the floor and share the room axes.

All randomness goes through ``numpy.random.Generator`` with the PCG64
bit generator (``np.random.default_rng(seed)``), which is portable across
platforms for a fixed numpy major version.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .camera import CameraIntrinsics, DepthMap, NormalMap, PointCloud, unproject
from .errors import GenerationError, ParameterError

SCENE_FORMAT = "sceneshape.scene"
SCENE_VERSION = 1

SHIFT_RANGE = (-0.25, 0.8)
FOCAL_SCALE_RANGE = (0.6, 1.25)

# room face labels
FLOOR, CEILING, WALL_W, WALL_E, WALL_S, WALL_N = range(6)
_ROOM_NORMALS = np.array(
    [[0, 0, 1], [0, 0, -1], [1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0]], dtype=float
)


@dataclass
class SceneConfig:
    room_x: tuple[float, float] = (4.0, 8.0)
    room_y: tuple[float, float] = (5.0, 9.0)
    room_z: tuple[float, float] = (2.6, 3.4)
    camera_height: tuple[float, float] = (1.2, 1.8)
    wall_margin: float = 1.0
    yaw_deg: tuple[float, float] = (10.0, 40.0)
    pitch_deg: tuple[float, float] = (5.0, 25.0)
    roll_deg: tuple[float, float] = (0.0, 5.0)
    n_boxes: tuple[int, int] = (0, 2)
    box_size: tuple[float, float] = (0.4, 1.2)
    camera_clearance: float = 1.0
    min_plane_pixels: float = 0.02
    oblique_deg: float = 5.0
    max_retries: int = 50
    resolution: int = 128
    fov_deg: float = 60.0

    def __post_init__(self):
        for name in ("room_x", "room_y", "room_z", "camera_height", "yaw_deg",
                     "pitch_deg", "roll_deg", "n_boxes", "box_size"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ParameterError(f"empty range for {name}: {lo} > {hi}")

    def camera(self) -> CameraIntrinsics:
        return CameraIntrinsics.from_fov(self.fov_deg, self.resolution, self.resolution)


@dataclass
class SyntheticScene:
    room: tuple[float, float, float]
    boxes: list[tuple[tuple[float, float, float], tuple[float, float, float]]]
    yaw: float
    pitch: float
    roll: float
    position: tuple[float, float, float]
    seed: int = 0

    @property
    def planes(self) -> list[tuple[tuple[float, ...], float]]:
        """World-frame (normal, offset) pairs, ``normal . X = offset``.

        Room normals point into the room; box normals point outward.  Index
        in this list is the pixel label produced by :func:`render_depth`.
        """
        lx, ly, lz = self.room
        out = [((0, 0, 1), 0.0), ((0, 0, -1), -lz), ((1, 0, 0), 0.0),
               ((-1, 0, 0), -lx), ((0, 1, 0), 0.0), ((0, -1, 0), -ly)]
        for lo, hi in self.boxes:
            out += [((-1, 0, 0), -lo[0]), ((1, 0, 0), hi[0]),
                    ((0, -1, 0), -lo[1]), ((0, 1, 0), hi[1]),
                    ((0, 0, -1), -lo[2]), ((0, 0, 1), hi[2])]
        return [(tuple(float(c) for c in n), float(o)) for n, o in out]

    def rotation(self) -> np.ndarray:
        """Camera-to-world rotation."""
        return camera_rotation(self.yaw, self.pitch, self.roll)

    def to_json(self) -> str:
        payload = {"format": SCENE_FORMAT, "version": SCENE_VERSION, **asdict(self)}
        payload["planes"] = [{"normal": list(n), "offset": o} for n, o in self.planes]
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SyntheticScene":
        data = json.loads(text)
        if data.get("format") != SCENE_FORMAT:
            raise ParameterError("not a scene file")
        if data.get("version") != SCENE_VERSION:
            raise ParameterError(f"unsupported scene version {data.get('version')}")
        return cls(
            room=tuple(data["room"]),
            boxes=[(tuple(lo), tuple(hi)) for lo, hi in data["boxes"]],
            yaw=data["yaw"], pitch=data["pitch"], roll=data["roll"],
            position=tuple(data["position"]), seed=data["seed"],
        )


def camera_rotation(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Camera-to-world rotation for yaw/pitch/roll in degrees.

    Positive pitch looks down, positive yaw turns toward -X (left).
    """
    base = np.array([[1.0, 0, 0], [0, 0, 1], [0, -1, 0]])
    cy, sy = math.cos(math.radians(yaw)), math.sin(math.radians(yaw))
    cp, sp = math.cos(math.radians(pitch)), math.sin(math.radians(pitch))
    cr, sr = math.cos(math.radians(roll)), math.sin(math.radians(roll))
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    rx = np.array([[1, 0, 0], [0, cp, sp], [0, -sp, cp]])
    rroll = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]])
    return rz @ base @ rx @ rroll


def _signed_uniform(rng, lo, hi):
    return float(rng.uniform(lo, hi) * rng.choice([-1.0, 1.0]))


def _draw(rng: np.random.Generator, cfg: SceneConfig, seed: int) -> SyntheticScene:
    lx = float(rng.uniform(*cfg.room_x))
    ly = float(rng.uniform(*cfg.room_y))
    lz = float(rng.uniform(*cfg.room_z))
    m = cfg.wall_margin
    if lx < 2 * m or ly < 2 * m:
        raise GenerationError("room too small for the wall margin")
    hi_h = min(cfg.camera_height[1], lz - 0.3)
    if hi_h < cfg.camera_height[0]:
        raise GenerationError("room too low for the camera height range")
    # camera sits in the back part of the room and looks along +Y
    cam = (float(rng.uniform(m, lx - m)),
           float(rng.uniform(m, max(m, 0.4 * ly))),
           float(rng.uniform(cfg.camera_height[0], hi_h)))
    yaw = _signed_uniform(rng, *cfg.yaw_deg)
    pitch = _signed_uniform(rng, *cfg.pitch_deg)
    roll = _signed_uniform(rng, *cfg.roll_deg)

    boxes = []
    n_boxes = int(rng.integers(cfg.n_boxes[0], cfg.n_boxes[1] + 1))
    for _ in range(n_boxes):
        for _attempt in range(20):
            sx, sy_, sz = rng.uniform(*cfg.box_size, size=3)
            y_lo, y_hi = cam[1] + cfg.camera_clearance, ly - 0.1 - sy_
            if lx - 0.2 - sx <= 0 or y_hi <= y_lo:
                continue
            x0 = rng.uniform(0.1, lx - 0.1 - sx)
            y0 = rng.uniform(y_lo, y_hi)
            lo = (float(x0), float(y0), 0.0)
            hi = (float(x0 + sx), float(y0 + sy_), float(min(sz, lz - 0.2)))
            # keep clear of the camera so every ray starts inside free space
            cx = min(max(cam[0], lo[0]), hi[0])
            cyy = min(max(cam[1], lo[1]), hi[1])
            if math.hypot(cx - cam[0], cyy - cam[1]) < cfg.camera_clearance:
                continue
            boxes.append((lo, hi))
            break
    return SyntheticScene((lx, ly, lz), boxes, yaw, pitch, roll, cam, seed)


def _visible_oblique(scene: SyntheticScene, cfg: SceneConfig) -> int:
    cam = cfg.camera()
    _, labels, normals = render_depth(scene, cam)
    n_min = cfg.min_plane_pixels * labels.size
    count = 0
    for lab in np.unique(labels):
        sel = labels == lab
        if sel.sum() < n_min:
            continue
        nz = abs(normals.normals[sel][0, 2])
        if math.degrees(math.acos(min(nz, 1.0))) > cfg.oblique_deg:
            count += 1
    return count


def generate_scene(seed: int, config: Optional[SceneConfig] = None) -> SyntheticScene:
    cfg = config or SceneConfig()
    rng = np.random.default_rng(seed)
    for _ in range(cfg.max_retries):
        scene = _draw(rng, cfg, seed)
        if _visible_oblique(scene, cfg) >= 2:
            return scene
    raise GenerationError(f"no valid scene after {cfg.max_retries} attempts (seed {seed})")


def render_depth(scene: SyntheticScene, cam: CameraIntrinsics):
    """Ray-cast the scene. Returns ``(DepthMap, labels, NormalMap)``.

    Depth is the camera-frame z of the first hit, which equals the ray
    parameter because rays are scaled to unit z.
    """
    R = scene.rotation()
    C = np.asarray(scene.position, dtype=float)
    rays_c = cam.rays().reshape(-1, 3)
    rays_w = rays_c @ R.T
    n_pix = len(rays_w)
    planes = scene.planes

    # exit through the room: smallest positive t over the six inward faces
    best_t = np.full(n_pix, np.inf)
    label = np.full(n_pix, -1, dtype=np.int64)
    for k in range(6):
        n = np.asarray(planes[k][0])
        denom = rays_w @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (planes[k][1] - n @ C) / denom
        hit = (denom < 0) & (t > 0) & (t < best_t)
        best_t[hit] = t[hit]
        label[hit] = k

    # boxes: slab entry point
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / rays_w
    for b, (lo, hi) in enumerate(scene.boxes):
        lo = np.asarray(lo)
        hi = np.asarray(hi)
        with np.errstate(invalid="ignore"):
            t1 = (lo - C) * inv
            t2 = (hi - C) * inv
        tmin = np.minimum(t1, t2)
        tmax = np.maximum(t1, t2)
        t_enter = tmin.max(axis=1)
        axis = tmin.argmax(axis=1)
        t_exit = tmax.min(axis=1)
        hit = (t_enter <= t_exit) & (t_enter > 0) & (t_enter < best_t)
        # face index: 2*axis + (0 for the low face, 1 for the high face)
        high = rays_w[np.arange(n_pix), axis] < 0
        face = 2 * axis + high.astype(np.int64)
        best_t[hit] = t_enter[hit]
        label[hit] = 6 + 6 * b + face[hit]

    if np.any(label < 0):
        raise GenerationError("ray escaped the room")

    depth = best_t.reshape(cam.height, cam.width)
    labels = label.reshape(cam.height, cam.width)
    world_n = np.array([p[0] for p in planes], dtype=float)
    cam_n = world_n @ R  # R^T n for each plane
    cam_n[cam_n[:, 2] > 0] *= -1.0
    normals = cam_n[labels]
    return (DepthMap(depth, unit="metric"), labels,
            NormalMap(normals, np.ones(labels.shape, dtype=bool)))


def camera_planes(scene: SyntheticScene) -> list[tuple[np.ndarray, float]]:
    """Scene planes expressed in the camera frame, normals facing the camera."""
    R = scene.rotation()
    C = np.asarray(scene.position, dtype=float)
    out = []
    for n, c in scene.planes:
        n = np.asarray(n, dtype=float)
        nc = R.T @ n
        oc = c - n @ C
        if nc[2] > 0:
            nc, oc = -nc, -oc
        out.append((nc, float(oc)))
    return out


@dataclass(frozen=True)
class PerturbationSample:
    delta_d: float = 0.0
    alpha_f: float = 1.0


def sample_perturbation(rng: np.random.Generator) -> PerturbationSample:
    return PerturbationSample(float(rng.uniform(*SHIFT_RANGE)),
                              float(rng.uniform(*FOCAL_SCALE_RANGE)))


def scale_normalize(depth: DepthMap) -> DepthMap:
    """Divide by the maximum valid depth: a normalized map with no shift."""
    return depth.replace(values=depth.values / depth.valid_values().max(), unit="normalized")


@dataclass
class DistortedCloud:
    cloud: PointCloud
    depth: DepthMap
    camera: CameraIntrinsics
    n_masked: int = 0


def apply_distortion(depth: DepthMap, cam: CameraIntrinsics, p: PerturbationSample,
                     mode: str) -> DistortedCloud:
    """Perturb exactly one factor: ``shift`` adds ``delta_d``, ``focal`` scales f."""
    if mode == "shift":
        values = depth.values + p.delta_d
        bad = depth.mask & ~(values > 0)
        n_bad = int(bad.sum())
        if n_bad:
            warnings.warn(f"shift made {n_bad} pixels non-positive; masked", RuntimeWarning)
        shifted = depth.replace(values=values, mask=depth.mask & ~bad)
        return DistortedCloud(unproject(shifted, cam), shifted, cam, n_bad)
    if mode == "focal":
        cam_f = cam.with_focal(cam.f * p.alpha_f)
        return DistortedCloud(unproject(depth, cam_f), depth, cam_f, 0)
    raise ParameterError(f"mode must be 'shift' or 'focal', got {mode!r}")
