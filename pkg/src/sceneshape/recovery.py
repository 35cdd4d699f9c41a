"""Depth-shift and focal-scale recovery from a distorted point cloud.

Both recoveries are 1-D searches over a geometric objective evaluated on
plane segments whose pixel memberships are fixed up front:

* shift: total plane-fit rms of ``unproject(d + delta, f)``.  A depth shift
  bends every plane that is neither fronto-parallel nor through the camera
  centre, so the objective vanishes at the correcting shift.
* focal: squared distance of every segment-pair angle to the nearest of
  0 and 90 degrees (Manhattan prior).  Focal scaling keeps planes planar
  but changes the angles between them.

The search is a coarse grid followed by golden-section refinement inside
the best grid cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .camera import (CameraIntrinsics, DepthMap, PlaneSegment, PointCloud,
                     compute_normals, unproject)
from .errors import DegenerateNormalizationError, InsufficientStructureError, ParameterError
from .sampling import _segment_from_pixels, cluster_planes
from scipy import ndimage

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class SearchSpec:
    lower: float
    upper: float
    step: float
    tol: float = 1e-4

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ParameterError("empty search interval")
        if not (self.step > 0 and self.tol > 0):
            raise ParameterError("step and tolerance must be positive")


SHIFT_SEARCH = SearchSpec(-0.8, 0.8, 0.01)
# [0.25, 4] rather than [0.5, 2]: an initial FOV of 20 degrees is ~3.3x too
# long a focal for a 60 degree camera
FOCAL_SEARCH = SearchSpec(0.25, 4.0, 0.02)


@dataclass
class RecoveryResult:
    delta_d: float = 0.0
    alpha_f: float = 1.0
    objective_trace: list[tuple[float, float]] = field(default_factory=list)
    segments_used: int = 0
    focal: Optional[float] = None
    evaluations: int = 0


@dataclass
class SegmentParams:
    window: int = 9
    eps: float = 0.05
    # small clusters tend to be strips along creases, not planes
    min_pts: int = 150
    # rings of edge pixels re-attached after clustering; 0 disables
    grow_steps: int = 4
    grow_sigmas: float = 2.0


def normalize_unit(depth: DepthMap) -> DepthMap:
    """Min-max normalise valid pixels to [0, 1]."""
    v = depth.valid_values()
    if v.size == 0:
        raise DegenerateNormalizationError("no valid pixels")
    lo, hi = float(v.min()), float(v.max())
    if not hi > lo:
        raise DegenerateNormalizationError("depth is constant")
    if lo == 0.0 and hi == 1.0:
        return depth.replace(unit="normalized")
    out = np.where(depth.mask, (depth.values - lo) / (hi - lo), 0.0)
    return DepthMap(out, depth.mask, unit="normalized")


def minimize_1d(fn: Callable[[float], float], search: SearchSpec):
    """Coarse grid then golden section in the bracket around the grid minimum.

    Returns ``(x_best, f_best, trace, n_evals)`` where ``trace`` holds every
    strict improvement of the incumbent, in evaluation order.
    """
    trace: list[tuple[float, float]] = []
    best = [math.inf, math.nan]
    n = [0]

    def f(x):
        y = float(fn(x))
        n[0] += 1
        if y < best[0]:
            best[0], best[1] = y, x
            trace.append((float(x), y))
        return y

    n_steps = int(round((search.upper - search.lower) / search.step))
    grid = search.lower + search.step * np.arange(n_steps + 1)
    grid[-1] = min(grid[-1], search.upper)
    vals = [f(x) for x in grid]
    i = int(np.argmin(vals))
    a = grid[max(i - 1, 0)]
    b = grid[min(i + 1, len(grid) - 1)]

    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > search.tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    f(0.5 * (a + b))
    return best[1], best[0], trace, n[0]


def find_segments(depth: DepthMap, cam: CameraIntrinsics,
                  params: Optional[SegmentParams] = None) -> list[PlaneSegment]:
    p = params or SegmentParams()
    normals = compute_normals(depth, cam, window=p.window)
    segs = cluster_planes(normals, depth, cam, eps=p.eps, min_pts=p.min_pts)
    if p.grow_steps > 0 and segs:
        segs = grow_segments(segs, depth, cam, p.grow_steps, p.grow_sigmas)
    return segs


def _quadratic_design(rows: np.ndarray, cols: np.ndarray, scale: float) -> np.ndarray:
    u = cols / scale
    v = rows / scale
    return np.stack([np.ones_like(u), u, v, u * u, u * v, v * v], axis=1)


def grow_segments(segments: list[PlaneSegment], depth: DepthMap, cam: CameraIntrinsics,
                  steps: int = 4, n_sigmas: float = 2.0) -> list[PlaneSegment]:
    """Re-attach unassigned border pixels that continue a segment's surface.

    Large normal windows keep clusters pure but strip a band along every
    crease, which weakens the curvature signal the shift objective relies
    on.  Each segment's depth is modelled as a quadratic in pixel
    coordinates; a neighbouring unassigned pixel joins when its depth is
    within ``n_sigmas`` robust residual deviations of that model.  Ties go
    to the segment with the smaller normalised residual.
    """
    h, w = depth.shape
    scale = float(max(h, w))
    labels = np.full(depth.shape, -1, dtype=np.int64)
    coefs, sigmas = [], []
    for i, seg in enumerate(segments):
        r, c = seg.pixels[:, 0], seg.pixels[:, 1]
        labels[r, c] = i
        a = _quadratic_design(r.astype(float), c.astype(float), scale)
        beta, *_ = np.linalg.lstsq(a, depth.values[r, c], rcond=None)
        res = depth.values[r, c] - a @ beta
        coefs.append(beta)
        sigmas.append(max(1.4826 * float(np.median(np.abs(res - np.median(res)))), 1e-12))
    rr, cc = np.mgrid[0:h, 0:w].astype(float)
    full = _quadratic_design(rr.ravel(), cc.ravel(), scale)
    score = np.stack([np.abs(depth.values.ravel() - full @ b) / s
                      for b, s in zip(coefs, sigmas)]).reshape(len(segments), h, w)
    free = depth.mask & (labels < 0)
    stencil = np.ones((3, 3), dtype=bool)
    for _ in range(steps):
        best = np.full(depth.shape, np.inf)
        pick = np.full(depth.shape, -1, dtype=np.int64)
        for i in range(len(segments)):
            cand = ndimage.binary_dilation(labels == i, stencil) & free & (score[i] <= n_sigmas)
            better = cand & (score[i] < best)
            best[better] = score[i][better]
            pick[better] = i
        grown = pick >= 0
        if not grown.any():
            break
        labels[grown] = pick[grown]
        free &= ~grown
    grid = cam.rays() * depth.values[..., None]
    out = []
    for i, seg in enumerate(segments):
        pix = np.argwhere(labels == i)
        new = _segment_from_pixels(pix, grid, seg.label)
        out.append(new if new is not None else seg)
    return out


class _ShiftObjective:
    """Sum of plane-fit rms of ``(d + delta) * ray`` over fixed segments.

    Per segment the centred scatter matrix is a quadratic in delta,
    ``S(delta) = Sdd + delta (Sdr + Srd) + delta^2 Srr``, so each evaluation
    is one batched 3x3 eigen-solve.
    """

    def __init__(self, depth: DepthMap, cam: CameraIntrinsics, segments):
        rays = cam.rays()
        mats = []
        counts = []
        for seg in segments:
            r = rays[seg.pixels[:, 0], seg.pixels[:, 1]]
            p = r * depth.values[seg.pixels[:, 0], seg.pixels[:, 1]][:, None]
            rc = r - r.mean(axis=0)
            pc = p - p.mean(axis=0)
            cross = pc.T @ rc
            mats.append((pc.T @ pc, cross + cross.T, rc.T @ rc))
            counts.append(len(seg))
        self.s0 = np.array([m[0] for m in mats])
        self.s1 = np.array([m[1] for m in mats])
        self.s2 = np.array([m[2] for m in mats])
        self.counts = np.asarray(counts, dtype=float)

    def per_segment(self, delta: float) -> np.ndarray:
        s = self.s0 + delta * self.s1 + delta * delta * self.s2
        lam = np.linalg.eigvalsh(s)[:, 0]
        return np.sqrt(np.maximum(lam, 0.0) / self.counts)

    def __call__(self, delta: float) -> float:
        return float(self.per_segment(delta).sum())


def recover_shift(depth: DepthMap, cam_init: CameraIntrinsics,
                  search: SearchSpec = SHIFT_SEARCH,
                  segment_params: Optional[SegmentParams] = None,
                  segments: Optional[list[PlaneSegment]] = None,
                  refit_memberships: bool = False) -> RecoveryResult:
    """Shift ``delta`` such that ``depth + delta`` un-projects to flat planes.

    Memberships come from clustering at ``delta = 0``.  With
    ``refit_memberships`` a second pass re-clusters on the corrected depth
    and searches again around the first estimate.
    """
    if segments is None:
        segments = find_segments(depth, cam_init, segment_params)
    if len(segments) < 2:
        raise InsufficientStructureError(
            f"shift recovery needs >= 2 plane segments, found {len(segments)}")
    obj = _ShiftObjective(depth, cam_init, segments)
    x, fx, trace, n = minimize_1d(obj, search)
    res = RecoveryResult(delta_d=float(x), objective_trace=trace,
                         segments_used=len(segments), evaluations=n)
    if refit_memberships:
        shifted = depth.replace(values=depth.values + x)
        shifted.mask &= shifted.values > 0
        segs2 = find_segments(shifted, cam_init, segment_params)
        if len(segs2) >= 2:
            obj2 = _ShiftObjective(depth, cam_init, segs2)
            half = 5 * search.step
            sub = SearchSpec(max(search.lower, x - half), min(search.upper, x + half),
                             search.step / 5, search.tol)
            x2, _, trace2, n2 = minimize_1d(obj2, sub)
            res = RecoveryResult(delta_d=float(x2), objective_trace=trace + trace2,
                                 segments_used=len(segs2), evaluations=n + n2)
    return res


def shift_objective(depth: DepthMap, cam: CameraIntrinsics, segments) -> Callable[[float], float]:
    return _ShiftObjective(depth, cam, segments)


def trim_to_plane(points: np.ndarray, n_sigmas: float = 3.0, iters: int = 20) -> np.ndarray:
    """Drop points off the segment's dominant plane (robust residual test).

    Focal scaling maps planes to planes, so pixels rejected here at the
    initial focal would be off-plane at every candidate focal too.
    """
    keep = np.ones(len(points), dtype=bool)
    extent = float(np.ptp(points, axis=0).max()) or 1.0
    for _ in range(iters):
        q = points[keep] - points[keep].mean(axis=0)
        normal = np.linalg.eigh(q.T @ q)[1][:, 0]
        res = (points - points[keep].mean(axis=0)) @ normal
        med = np.median(res[keep])
        sigma = 1.4826 * np.median(np.abs(res[keep] - med))
        new = np.abs(res - med) <= max(n_sigmas * sigma, 1e-9 * extent)
        if new.sum() < 3 or np.array_equal(new, keep):
            break
        keep = new
    return points[keep]


class _FocalObjective:
    """Manhattan angle residual of segment normals for focal ``f_init / alpha``.

    Dividing the focal by alpha scales x and y by alpha, so each segment's
    scatter matrix transforms as ``D S D`` with ``D = diag(alpha, alpha, 1)``.
    """

    def __init__(self, depth: DepthMap, cam: CameraIntrinsics, segments, trim: bool = True):
        rays = cam.rays()
        mats = []
        for seg in segments:
            p = rays[seg.pixels[:, 0], seg.pixels[:, 1]] * \
                depth.values[seg.pixels[:, 0], seg.pixels[:, 1]][:, None]
            if trim:
                p = trim_to_plane(p)
            pc = p - p.mean(axis=0)
            mats.append(pc.T @ pc)
        self.scatter = np.array(mats)
        self.iu = np.triu_indices(len(segments), k=1)

    def normals(self, alpha: float) -> np.ndarray:
        dvec = np.array([alpha, alpha, 1.0])
        s = self.scatter * dvec[None, :, None] * dvec[None, None, :]
        _, vecs = np.linalg.eigh(s)
        return vecs[:, :, 0]

    def pair_angles(self, alpha: float) -> np.ndarray:
        n = self.normals(alpha)
        dots = np.abs(n @ n.T)[self.iu]
        return np.degrees(np.arccos(np.clip(dots, 0.0, 1.0)))

    def __call__(self, alpha: float) -> float:
        ang = self.pair_angles(alpha)
        dist = np.minimum(ang, 90.0 - ang)
        return float(np.sum(dist ** 2))


def recover_focal(depth: DepthMap, cam_init: CameraIntrinsics,
                  search: SearchSpec = FOCAL_SEARCH,
                  segment_params: Optional[SegmentParams] = None,
                  segments: Optional[list[PlaneSegment]] = None,
                  min_pair_angle: float = 5.0) -> RecoveryResult:
    """Focal scale ``alpha`` such that ``f_init / alpha`` squares up the planes.

    A cloud built with ``alpha* f`` is undone by ``alpha = alpha*``; the
    corrected focal is reported in ``RecoveryResult.focal``.
    """
    if segments is None:
        segments = find_segments(depth, cam_init, segment_params)
    if len(segments) < 2:
        raise InsufficientStructureError(
            f"focal recovery needs >= 2 plane segments, found {len(segments)}")
    obj = _FocalObjective(depth, cam_init, segments)
    if not np.any(obj.pair_angles(1.0) > min_pair_angle):
        raise InsufficientStructureError("all plane segments are parallel")
    x, fx, trace, n = minimize_1d(obj, search)
    return RecoveryResult(alpha_f=float(x), objective_trace=trace,
                          segments_used=len(segments), focal=cam_init.f / x, evaluations=n)


def focal_objective(depth: DepthMap, cam: CameraIntrinsics, segments) -> _FocalObjective:
    return _FocalObjective(depth, cam, segments)


@dataclass
class SceneRecovery:
    shift: RecoveryResult
    focal: RecoveryResult
    depth: DepthMap
    camera: CameraIntrinsics

    @property
    def delta_d(self) -> float:
        return self.shift.delta_d

    @property
    def alpha_f(self) -> float:
        return self.focal.alpha_f


def reconstruct_scene(depth: DepthMap, cam_guess: CameraIntrinsics,
                      shift_search: SearchSpec = SHIFT_SEARCH,
                      focal_search: SearchSpec = FOCAL_SEARCH,
                      segment_params: Optional[SegmentParams] = None,
                      normalize: Optional[bool] = None) -> tuple[PointCloud, SceneRecovery]:
    """normalise -> recover shift -> apply it -> recover focal -> un-project.

    Inputs already tagged ``normalized`` skip min-max normalisation unless
    ``normalize`` says otherwise.
    """
    if normalize is None:
        normalize = depth.unit != "normalized"
    d = normalize_unit(depth) if normalize else depth
    shift = recover_shift(d, cam_guess, shift_search, segment_params)
    corrected = d.replace(values=d.values + shift.delta_d)
    corrected.mask &= corrected.values > 0
    focal = recover_focal(corrected, cam_guess, focal_search, segment_params)
    cam = cam_guess.with_focal(focal.focal)
    cloud = unproject(corrected, cam)
    return cloud, SceneRecovery(shift, focal, corrected, cam)
