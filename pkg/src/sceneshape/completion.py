"""Sparse depth synthesis, outlier injection and prior-guided completion.

Completion is classical: a robust affine fit of a relative-depth prior to
the sparse metric samples, then the remaining residual at the trusted
samples is spread over the image by a screened harmonic interpolation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import cv2
import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve
from skimage.draw import polygon as raster_polygon

from .camera import DepthMap
from .errors import AlignmentError, ParameterError, ShapeMismatchError

KINDS = ("uniform", "features", "polygon_hole", "distance_hole", "unpaired_fov",
         "sparse_tof", "short_range", "lidar_lines")
OUTLIER_FACTOR = (0.1, 2.0)
HUBER_K = 1.345
MIN_OVERLAP = 10


@dataclass(frozen=True)
class SparsityPattern:
    """One sparsity generator and its parameters.

    Only the fields relevant to ``kind`` are read:

    ========================  ==========================================
    uniform                   ``count``
    features                  ``threshold`` (FAST intensity levels, 0-255)
    polygon_hole              ``vertices`` ((row, col) pairs) or random
    distance_hole             ``quantile`` (nearest fraction masked)
    unpaired_fov              ``border_fraction``, ``border_mode``
    sparse_tof                ``downsample``, ``far_quantile``
    short_range               ``quantile`` (farthest fraction masked)
    lidar_lines               ``count`` (scan rows kept)
    ========================  ==========================================
    """

    kind: str
    seed: int = 0
    count: int = 500
    threshold: int = 10
    vertices: Optional[tuple[tuple[float, float], ...]] = None
    quantile: float = 0.5
    border_fraction: float = 0.25
    border_mode: str = "per_side"
    downsample: int = 8
    far_quantile: float = 0.9
    # random polygon holes: vertex count and area as fractions of the image
    n_vertices: tuple[int, int] = (3, 8)
    hole_area: tuple[float, float] = (0.05, 0.20)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown sparsity pattern {self.kind!r}")
        k = self.kind
        if k in ("uniform", "lidar_lines") and self.count < 1:
            raise ParameterError("count must be >= 1")
        if k == "features" and not 0 <= self.threshold <= 255:
            raise ParameterError("FAST threshold must be in [0, 255]")
        if k in ("short_range", "distance_hole") and not 0 <= self.quantile <= 1:
            raise ParameterError("quantile must be in [0, 1]")
        if k == "unpaired_fov":
            if self.border_mode not in ("per_side", "total"):
                raise ParameterError("border_mode must be 'per_side' or 'total'")
            limit = 0.5 if self.border_mode == "per_side" else 1.0
            if not 0 <= self.border_fraction < limit:
                raise ParameterError(f"border_fraction must be in [0, {limit})")
        if k == "sparse_tof":
            if self.downsample < 1:
                raise ParameterError("downsample must be >= 1")
            if not 0 < self.far_quantile <= 1:
                raise ParameterError("far_quantile must be in (0, 1]")
        if k == "polygon_hole" and self.vertices is not None and len(self.vertices) < 3:
            raise ParameterError("a polygon needs >= 3 vertices")

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "seed": self.seed}
        for name in {
            "uniform": ("count",), "features": ("threshold",),
            "polygon_hole": ("vertices", "n_vertices", "hole_area"),
            "distance_hole": ("quantile",), "short_range": ("quantile",),
            "unpaired_fov": ("border_fraction", "border_mode"),
            "sparse_tof": ("downsample", "far_quantile"), "lidar_lines": ("count",),
        }[self.kind]:
            v = getattr(self, name)
            out[name] = [list(x) for x in v] if name == "vertices" and v is not None else v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SparsityPattern":
        d = dict(d)
        if d.get("vertices") is not None:
            d["vertices"] = tuple(tuple(map(float, v)) for v in d["vertices"])
        for key in ("n_vertices", "hole_area"):
            if key in d:
                d[key] = tuple(d[key])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ParameterError(str(exc)) from None


@dataclass
class SparseDepth:
    values: np.ndarray
    mask: np.ndarray
    pattern: Optional[SparsityPattern] = None
    outliers: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    unit: str = "metric"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool) & np.isfinite(self.values)
        if self.mask.shape != self.values.shape:
            raise ShapeMismatchError("mask and values differ in shape")
        self.outliers = np.asarray(self.outliers, dtype=np.int64).ravel()

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def n_points(self) -> int:
        return int(self.mask.sum())

    def depth(self) -> DepthMap:
        return DepthMap(np.where(self.mask, self.values, 0.0), self.mask, self.unit)

    def flat_indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask)


def _stable_depth_order(values: np.ndarray, flat: np.ndarray) -> np.ndarray:
    """Indices sorted by (depth, pixel index)."""
    return flat[np.lexsort((flat, values.ravel()[flat]))]


def fast_corners(image: np.ndarray, threshold: int = 10, nonmax: bool = False) -> np.ndarray:
    """FAST-9 (16-pixel circle) corners as an (H, W) boolean map.

    Float images are min-max scaled to 8 bits first.
    """
    img = np.asarray(image)
    if img.dtype != np.uint8:
        f = np.nan_to_num(img.astype(np.float64))
        lo, hi = float(f.min()), float(f.max())
        f = (f - lo) / (hi - lo) if hi > lo else np.zeros_like(f)
        img = np.round(f * 255.0).astype(np.uint8)
    det = cv2.FastFeatureDetector_create(threshold=int(threshold), nonmaxSuppression=nonmax,
                                         type=cv2.FAST_FEATURE_DETECTOR_TYPE_9_16)
    out = np.zeros(img.shape, dtype=bool)
    for kp in det.detect(img, None):
        out[int(round(kp.pt[1])), int(round(kp.pt[0]))] = True
    return out


def _random_polygon(rng: np.random.Generator, h: int, w: int, pattern: SparsityPattern):
    """Star-shaped polygon scaled to a target area and shifted inside the image."""
    n = int(rng.integers(pattern.n_vertices[0], pattern.n_vertices[1] + 1))
    area = rng.uniform(*pattern.hole_area) * h * w
    ang = np.sort(rng.uniform(0.0, 2.0 * np.pi, n))
    rad = rng.uniform(0.5, 1.0, n)
    pts = np.stack([rad * np.sin(ang), rad * np.cos(ang)], axis=1)
    x, y = pts[:, 1], pts[:, 0]
    a0 = 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))
    pts *= math.sqrt(area / max(a0, 1e-12))
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = hi - lo
    room = np.maximum(np.array([h - 1.0, w - 1.0]) - span, 0.0)
    offset = rng.uniform(0.0, 1.0, 2) * room - lo
    return pts + offset


def _band(dim: int, fraction: float, mode: str) -> int:
    per_side = fraction if mode == "per_side" else fraction / 2.0
    return int(round(per_side * dim))


def gen_sparsity(gt: DepthMap, pattern: SparsityPattern,
                 image: Optional[np.ndarray] = None) -> SparseDepth:
    """Sample sparse depth from ``gt`` according to ``pattern``.

    ``image`` feeds the FAST detector for ``features``; the depth map itself
    is used when no image is given.
    """
    h, w = gt.shape
    valid = gt.mask
    flat = np.flatnonzero(valid)
    rng = np.random.default_rng(pattern.seed)
    k = pattern.kind
    keep = np.zeros((h, w), dtype=bool)

    if k == "uniform":
        n = pattern.count
        if n > flat.size:
            warnings.warn(f"requested {n} samples but only {flat.size} valid pixels; capped",
                          RuntimeWarning)
            n = flat.size
        # a permutation prefix, so larger counts with one seed are supersets
        keep.flat[rng.permutation(flat)[:n]] = True
    elif k == "features":
        src = gt.values if image is None else image
        if image is not None and np.asarray(image).shape[:2] != (h, w):
            raise ShapeMismatchError("feature image and depth differ in shape")
        if image is None:
            src = np.where(valid, gt.values, np.nan)
        keep = fast_corners(src, pattern.threshold) & valid
    elif k == "polygon_hole":
        verts = (np.asarray(pattern.vertices, dtype=np.float64) if pattern.vertices is not None
                 else _random_polygon(rng, h, w, pattern))
        rr, cc = raster_polygon(verts[:, 0], verts[:, 1], shape=(h, w))
        keep = valid.copy()
        keep[rr, cc] = False
    elif k in ("short_range", "distance_hole"):
        order = _stable_depth_order(gt.values, flat)
        n_mask = int(math.ceil(round(pattern.quantile * flat.size, 9)))
        masked = order[flat.size - n_mask:] if k == "short_range" else order[:n_mask]
        keep = valid.copy()
        keep.flat[masked] = False
    elif k == "unpaired_fov":
        br = _band(h, pattern.border_fraction, pattern.border_mode)
        bc = _band(w, pattern.border_fraction, pattern.border_mode)
        keep[br:h - br, bc:w - bc] = True
        keep &= valid
    elif k == "sparse_tof":
        s = pattern.downsample
        sites = np.zeros((h, w), dtype=bool)
        sites[s // 2::s, s // 2::s] = True
        far = np.quantile(gt.values[valid], pattern.far_quantile) if flat.size else 0.0
        keep = sites & valid & (gt.values <= far)
    elif k == "lidar_lines":
        n = min(pattern.count, h)
        if n < pattern.count:
            warnings.warn(f"requested {pattern.count} scan lines on {h} rows; capped",
                          RuntimeWarning)
        rows = np.floor((np.arange(n) + 0.5) * h / n).astype(int)
        keep[rows, :] = True
        keep &= valid
    values = np.where(keep, gt.values, 0.0)
    return SparseDepth(values, keep, pattern, unit=gt.unit)


def inject_outliers(sparse: SparseDepth, fraction: float,
                    rng: np.random.Generator) -> SparseDepth:
    """Scale ``ceil(fraction * n)`` random samples by factors from U(0.1, 2)."""
    if not 0 <= fraction <= 0.5:
        raise ParameterError("outlier fraction must be in [0, 0.5]")
    flat = sparse.flat_indices()
    n = int(math.ceil(round(fraction * flat.size, 9)))
    out = SparseDepth(sparse.values.copy(), sparse.mask.copy(), sparse.pattern,
                      sparse.outliers.copy(), sparse.unit)
    if n == 0:
        return out
    idx = np.sort(rng.choice(flat, size=n, replace=False))
    factors = rng.uniform(*OUTLIER_FACTOR, size=n)
    out.values.flat[idx] *= factors
    out.outliers = np.union1d(sparse.outliers, idx)
    return out


@dataclass
class RobustFit:
    s: float
    t: float
    inliers: np.ndarray  # (H, W) bool over the sparse sites
    weights: np.ndarray  # final Huber weight per overlap site, flat order
    iterations: int
    converged: bool

    def __iter__(self):
        return iter((self.s, self.t, self.inliers))


def _overlap(prior: DepthMap, sparse: SparseDepth):
    if prior.shape != sparse.shape:
        raise ShapeMismatchError(f"prior is {prior.shape} but sparse depth is {sparse.shape}")
    m = sparse.mask & prior.mask
    flat = np.flatnonzero(m)
    if flat.size < MIN_OVERLAP:
        raise AlignmentError(f"need >= {MIN_OVERLAP} sparse points on the prior, got {flat.size}")
    x = prior.values.ravel()[flat]
    y = sparse.values.ravel()[flat]
    sx = float(x.std())
    if not sx > 1e-12 * max(1.0, float(np.abs(x).max())):
        raise AlignmentError("prior is constant over the sparse points")
    return flat, x, y


def _wls(z: np.ndarray, y: np.ndarray, w: np.ndarray) -> tuple[float, float]:
    sw = w.sum()
    zm = float(w @ z) / sw
    ym = float(w @ y) / sw
    zc = z - zm
    szz = float(w @ (zc * zc))
    if szz <= 0:
        raise AlignmentError("weighted prior has no spread")
    a = float(w @ (zc * (y - ym))) / szz
    return a, ym - a * zm


def plain_align_sparse(prior: DepthMap, sparse: SparseDepth) -> tuple[float, float]:
    """Ordinary least-squares ``(s, t)`` on the sparse overlap."""
    _, x, y = _overlap(prior, sparse)
    mx, sx = x.mean(), x.std()
    a, b = _wls((x - mx) / sx, y, np.ones_like(y))
    return a / sx, b - a * mx / sx


def robust_align_sparse(prior: DepthMap, sparse: SparseDepth, max_iter: int = 50,
                        tol: float = 1e-8, huber_k: float = HUBER_K) -> RobustFit:
    """Huber IRLS fit of ``s * prior + t`` to the sparse samples.

    The Huber threshold is ``huber_k`` times the MAD of the current
    residuals.  Iteration stops after ``max_iter`` rounds or once the fitted
    values move by less than ``tol`` relative to the sample magnitude; that
    test depends only on residuals, so replacing the prior by any positive
    affine map of itself reproduces the same iterates.  Sites whose final
    weight is below 0.5 are flagged as outliers.
    """
    flat, x, y = _overlap(prior, sparse)
    # work in a standardised prior coordinate for conditioning
    mx, sx = float(x.mean()), float(x.std())
    z = (x - mx) / sx
    yscale = max(float(np.abs(y).max()), np.finfo(float).tiny)
    floor = 1e-12 * yscale

    w = np.ones_like(y)
    a, b = _wls(z, y, w)
    fit = a * z + b
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        r = y - fit
        delta = max(huber_k * float(np.median(np.abs(r - np.median(r)))), floor)
        ar = np.abs(r)
        w = np.where(ar <= delta, 1.0, delta / np.maximum(ar, floor))
        a, b = _wls(z, y, w)
        new_fit = a * z + b
        change = float(np.max(np.abs(new_fit - fit)))
        fit = new_fit
        if change < tol * yscale:
            converged = True
            break
    # weights consistent with the returned parameters
    r = y - fit
    delta = max(huber_k * float(np.median(np.abs(r - np.median(r)))), floor)
    ar = np.abs(r)
    w = np.where(ar <= delta, 1.0, delta / np.maximum(ar, floor))
    inliers = np.zeros(sparse.shape, dtype=bool)
    inliers.flat[flat[w >= 0.5]] = True
    s = a / sx
    t = b - a * mx / sx
    return RobustFit(s, t, inliers, w, it, converged)


def _grid_laplacian(domain: np.ndarray) -> sp.csr_matrix:
    """Graph Laplacian of the 4-connected pixel grid restricted to ``domain``."""
    h, w = domain.shape
    idx = np.full(domain.shape, -1, dtype=np.int64)
    n = int(domain.sum())
    idx[domain] = np.arange(n)
    rows, cols = [], []
    for a, b in ((idx[:, :-1], idx[:, 1:]), (idx[:-1, :], idx[1:, :])):
        ok = (a >= 0) & (b >= 0)
        rows.append(a[ok])
        cols.append(b[ok])
    i = np.concatenate(rows)
    j = np.concatenate(cols)
    adj = sp.coo_matrix((np.ones(i.size), (i, j)), shape=(n, n))
    adj = (adj + adj.T).tocsr()
    deg = np.asarray(adj.sum(axis=1)).ravel()
    return (sp.diags(deg) - adj).tocsr()


def diffuse_residuals(residual: np.ndarray, sites: np.ndarray, domain: np.ndarray,
                      screening: float = 1e-4) -> np.ndarray:
    """Screened harmonic interpolation of ``residual`` given at ``sites``.

    Solves ``(L + screening I) r = 0`` on free pixels with ``r`` fixed at the
    sites, so the field is harmonic between constraints and relaxes to 0 far
    from all of them.  Pixels outside ``domain`` get 0.
    """
    sites = sites & domain
    out = np.zeros(domain.shape)
    if not sites.any():
        return out
    lap = _grid_laplacian(domain)
    lin = np.full(domain.shape, -1, dtype=np.int64)
    lin[domain] = np.arange(int(domain.sum()))
    fixed = lin[sites]
    free_mask = domain & ~sites
    free = lin[free_mask]
    a = lap + screening * sp.identity(lap.shape[0], format="csr")
    r_fixed = residual[sites]
    if free.size:
        a_ff = a[free][:, free].tocsc()
        rhs = -(a[free][:, fixed] @ r_fixed)
        out[free_mask] = spsolve(a_ff, rhs)
    out[sites] = r_fixed
    return out


@dataclass
class CompletionResult:
    depth: DepthMap
    fit: RobustFit
    residual_field: np.ndarray


def complete_depth(prior: DepthMap, sparse: SparseDepth, screening: float = 1e-4,
                   fit: Optional[RobustFit] = None) -> CompletionResult:
    """Metric depth from an affine prior and sparse samples.

    ``s * prior + t`` plus the diffused residual of the inlier samples.
    Output equals the sparse value exactly at every inlier site; flagged
    outliers only receive the diffused field.
    """
    if fit is None:
        fit = robust_align_sparse(prior, sparse)
    aligned = fit.s * prior.values + fit.t
    domain = prior.mask | fit.inliers
    residual = np.where(fit.inliers, sparse.values - aligned, 0.0)
    field_ = diffuse_residuals(residual, fit.inliers, domain, screening)
    out = np.where(domain, aligned + field_, 0.0)
    out[fit.inliers] = sparse.values[fit.inliers]
    return CompletionResult(DepthMap(out, domain, "metric"), fit, field_)
