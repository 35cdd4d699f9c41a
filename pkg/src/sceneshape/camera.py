"""Pinhole camera model, depth <-> point cloud conversion, normals, plane fits.

Conventions used across the package:

* pixel ``(u, v)`` is (column, row); pixel centres sit on integer coordinates,
  no half-pixel offset.
* camera frame: x right, y down, z forward; a pixel with depth ``d`` maps to
  ``((u - u0) d / f, (v - v0) d / f, d)``.
* normals and plane normals are oriented so that their z component is <= 0,
  i.e. they face the camera.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DegenerateFitError, ParameterError, ShapeMismatchError

UNITS = ("metric", "normalized", "affine")


@dataclass(frozen=True)
class CameraIntrinsics:
    f: float
    u0: float
    v0: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.f > 0 and math.isfinite(self.f)):
            raise ParameterError(f"focal length must be positive, got {self.f}")
        if self.width <= 0 or self.height <= 0:
            raise ParameterError("image size must be positive")
        if not (0 <= self.u0 < self.width and 0 <= self.v0 < self.height):
            raise ParameterError("principal point outside the image")

    @classmethod
    def from_fov(cls, fov_deg: float, width: int, height: int) -> "CameraIntrinsics":
        """Horizontal field of view in degrees, principal point at the centre."""
        if not 0 < fov_deg < 180:
            raise ParameterError(f"fov must be in (0, 180), got {fov_deg}")
        f = (width / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
        return cls(f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)

    @property
    def fov_deg(self) -> float:
        return math.degrees(2.0 * math.atan((self.width / 2.0) / self.f))

    def with_focal(self, f: float) -> "CameraIntrinsics":
        return CameraIntrinsics(f, self.u0, self.v0, self.width, self.height)

    def rays(self) -> np.ndarray:
        """(H, W, 3) ray directions with unit z, so ``point = depth * ray``."""
        v, u = np.mgrid[0:self.height, 0:self.width].astype(np.float64)
        return np.stack(
            [(u - self.u0) / self.f, (v - self.v0) / self.f, np.ones_like(u)], axis=-1
        )


@dataclass
class DepthMap:
    values: np.ndarray
    mask: Optional[np.ndarray] = None
    unit: str = "metric"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeMismatchError(f"depth must be 2-D, got shape {self.values.shape}")
        finite = np.isfinite(self.values)
        if self.mask is None:
            self.mask = finite.copy()
        else:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.values.shape:
                raise ShapeMismatchError("mask and values differ in shape")
            self.mask = self.mask & finite
        if self.unit not in UNITS:
            raise ParameterError(f"unknown unit tag {self.unit!r}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def n_valid(self) -> int:
        return int(self.mask.sum())

    def valid_values(self) -> np.ndarray:
        return self.values[self.mask]

    def replace(self, values=None, mask=None, unit=None) -> "DepthMap":
        return DepthMap(
            self.values.copy() if values is None else values,
            self.mask.copy() if mask is None else mask,
            self.unit if unit is None else unit,
        )


@dataclass
class PointCloud:
    points: np.ndarray
    pixels: Optional[np.ndarray] = None  # (N, 2) as (row, col)
    unit: str = "metric"

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.pixels is not None:
            self.pixels = np.asarray(self.pixels, dtype=np.int64).reshape(-1, 2)
            if len(self.pixels) != len(self.points):
                raise ShapeMismatchError("provenance length differs from point count")

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class NormalMap:
    normals: np.ndarray
    mask: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape


@dataclass
class PlaneSegment:
    pixels: np.ndarray  # (M, 2) as (row, col)
    normal: np.ndarray
    offset: float
    rms: float
    label: int = -1

    def __len__(self) -> int:
        return len(self.pixels)

    def flat_index(self, width: int) -> np.ndarray:
        return self.pixels[:, 0] * width + self.pixels[:, 1]


def _check_dims(depth: DepthMap, cam: CameraIntrinsics) -> None:
    if depth.shape != (cam.height, cam.width):
        raise ShapeMismatchError(
            f"depth is {depth.shape} but camera is {(cam.height, cam.width)}"
        )


def unproject(depth: DepthMap, cam: CameraIntrinsics) -> PointCloud:
    _check_dims(depth, cam)
    rows, cols = np.nonzero(depth.mask)
    d = depth.values[rows, cols]
    pts = np.stack([(cols - cam.u0) * d / cam.f, (rows - cam.v0) * d / cam.f, d], axis=1)
    return PointCloud(pts, np.stack([rows, cols], axis=1), depth.unit)


def unproject_grid(depth: DepthMap, cam: CameraIntrinsics) -> np.ndarray:
    """Dense (H, W, 3) variant; invalid pixels hold NaN."""
    _check_dims(depth, cam)
    pts = cam.rays() * depth.values[..., None]
    pts[~depth.mask] = np.nan
    return pts


def project(cloud: PointCloud, cam: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`unproject`: returns (u, v) pixel coordinates and depth."""
    p = cloud.points
    z = p[:, 2]
    u = p[:, 0] * cam.f / z + cam.u0
    v = p[:, 1] * cam.f / z + cam.v0
    return np.stack([u, v], axis=1), z


def _orient(normals: np.ndarray) -> np.ndarray:
    flip = normals[..., 2] > 0
    normals = normals.copy()
    normals[flip] *= -1.0
    return normals


def fit_plane(points: np.ndarray, rank_tol: float = 1e-12):
    """Least-squares plane through ``points``.

    Returns ``(normal, offset, rms)`` with ``normal . p = offset`` and the
    normal facing the camera (z <= 0).
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 3:
        raise DegenerateFitError(f"need at least 3 points, got {len(pts)}")
    centroid = pts.mean(axis=0)
    q = pts - centroid
    cov = q.T @ q
    evals, evecs = np.linalg.eigh(cov)
    scale = max(evals[2], np.finfo(float).tiny)
    if evals[1] <= rank_tol * scale:
        raise DegenerateFitError("points are collinear or coincident")
    normal = evecs[:, 0]
    if normal[2] > 0:
        normal = -normal
    offset = float(normal @ centroid)
    # explicit residuals: the eigenvalue itself carries ~sqrt(eps) error
    rms = float(np.sqrt(np.mean((q @ normal) ** 2)))
    return normal, offset, rms


def plane_rms(points: np.ndarray) -> float:
    return fit_plane(points)[2]


def compute_normals(depth: DepthMap, cam: CameraIntrinsics, window: int = 3,
                    min_points: int = 3) -> NormalMap:
    """Per-pixel normal of the least-squares plane through the window's points.

    Pixels with an invalid centre, fewer than ``min_points`` valid window
    members, or a collinear window are masked out.
    """
    if window < 3 or window % 2 == 0:
        raise ParameterError(f"window must be odd and >= 3, got {window}")
    _check_dims(depth, cam)
    r = window // 2
    pts = cam.rays() * np.where(depth.mask, depth.values, 0.0)[..., None]
    pts = np.pad(pts, ((r, r), (r, r), (0, 0)))
    m = np.pad(depth.mask, r).astype(np.float64)

    # (H, W, 3, w, w) and (H, W, w, w)
    win = sliding_window_view(pts, (window, window), axis=(0, 1))
    wm = sliding_window_view(m, (window, window))
    count = wm.sum(axis=(-1, -2))
    safe = np.maximum(count, 1.0)
    centroid = (win * wm[:, :, None]).sum(axis=(-1, -2)) / safe[..., None]
    q = (win - centroid[..., None, None]) * wm[:, :, None]
    cov = np.einsum("hwiab,hwjab->hwij", q, q)
    evals, evecs = np.linalg.eigh(cov)
    normals = _orient(evecs[..., :, 0])

    scale = np.maximum(evals[..., 2], np.finfo(float).tiny)
    ok = depth.mask & (count >= min_points) & (evals[..., 1] > 1e-12 * scale)
    normals[~ok] = 0.0
    return NormalMap(normals, ok)


def angle_between(a: np.ndarray, b: np.ndarray, axis: bool = False) -> np.ndarray:
    """Angle in degrees between unit vectors (last axis).

    With ``axis=True`` the vectors are treated as unsigned directions, giving
    an angle in [0, 90].
    """
    dot = np.sum(np.asarray(a) * np.asarray(b), axis=-1)
    if axis:
        dot = np.abs(dot)
    return np.degrees(np.arccos(np.clip(dot, -1.0, 1.0)))
