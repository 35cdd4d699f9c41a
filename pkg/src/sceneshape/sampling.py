"""Edge detection, PWN/SR pair sampling, and normal-based plane clustering."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional

import numpy as np
from scipy import ndimage
from sklearn.cluster import DBSCAN

from .camera import (CameraIntrinsics, DepthMap, NormalMap, PlaneSegment, fit_plane,
                     unproject_grid)
from .errors import DegenerateFitError, ParameterError

EDGE_THRESHOLD = 0.1
POSITIVE_DOT = 0.3
NEGATIVE_DOT = 0.95
PAIR_RADIUS = (2, 5)


class PairLabel(IntEnum):
    EDGE_POSITIVE = 1
    EDGE_NEGATIVE = 2
    COPLANAR = 3


@dataclass
class EdgeMap:
    strength: np.ndarray
    binary: np.ndarray
    source: str
    gx: np.ndarray
    gy: np.ndarray


@dataclass
class PointPairSet:
    a: np.ndarray  # (N, 2) row, col
    b: np.ndarray
    labels: np.ndarray
    gt_normals: np.ndarray  # (N, 2, 3)

    def __len__(self) -> int:
        return len(self.a)

    @property
    def gt_dots(self) -> np.ndarray:
        """Target dot products; exactly 1 for coplanar pairs."""
        dots = np.einsum("ij,ij->i", self.gt_normals[:, 0], self.gt_normals[:, 1])
        return np.where(self.labels == PairLabel.COPLANAR, 1.0, dots)

    @classmethod
    def empty(cls) -> "PointPairSet":
        return cls(np.zeros((0, 2), np.int64), np.zeros((0, 2), np.int64),
                   np.zeros(0, np.int64), np.zeros((0, 2, 3)))

    @classmethod
    def concat(cls, *sets: "PointPairSet") -> "PointPairSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls.empty()
        return cls(np.concatenate([s.a for s in sets]), np.concatenate([s.b for s in sets]),
                   np.concatenate([s.labels for s in sets]),
                   np.concatenate([s.gt_normals for s in sets]))


def detect_edges(grid, mask: Optional[np.ndarray] = None, threshold: float = EDGE_THRESHOLD,
                 source: Optional[str] = None) -> EdgeMap:
    """3x3 Sobel magnitude; binary edges above ``threshold`` x 99th percentile.

    Accepts a :class:`DepthMap`, a :class:`NormalMap` or a raw (H, W) /
    (H, W, C) array.  Strength is zero wherever the 3x3 neighbourhood touches
    an invalid pixel; image borders are handled by reflection.
    """
    if isinstance(grid, DepthMap):
        data, mask, src = grid.values[..., None], grid.mask, "depth"
    elif isinstance(grid, NormalMap):
        data, mask, src = grid.normals, grid.mask, "normal"
    else:
        data = np.asarray(grid, dtype=np.float64)
        if data.ndim == 2:
            data = data[..., None]
        src = "image"
    source = source or src
    if mask is None:
        mask = np.ones(data.shape[:2], dtype=bool)
    filled = np.where(mask[..., None], data, 0.0).astype(np.float64)
    gx = np.stack([ndimage.sobel(filled[..., c], axis=1, mode="reflect")
                   for c in range(data.shape[2])], axis=-1)
    gy = np.stack([ndimage.sobel(filled[..., c], axis=0, mode="reflect")
                   for c in range(data.shape[2])], axis=-1)
    strength = np.sqrt((gx ** 2 + gy ** 2).sum(axis=-1))
    ok = ndimage.binary_erosion(mask, structure=np.ones((3, 3)), border_value=1)
    strength = np.where(ok, strength, 0.0)

    # dominant gradient direction: for multi-channel input take the
    # channel with the largest response
    best = np.argmax(gx ** 2 + gy ** 2, axis=-1)[..., None]
    dgx = np.take_along_axis(gx, best, axis=-1)[..., 0]
    dgy = np.take_along_axis(gy, best, axis=-1)[..., 0]

    vals = strength[ok]
    ref = float(np.percentile(vals, 99)) if vals.size else 0.0
    if ref <= 0 and vals.size:
        ref = float(vals.max())
    binary = (strength > threshold * ref) if ref > 0 else np.zeros_like(ok)
    return EdgeMap(strength, binary & ok, source, dgx, dgy)


def thin_edges(edges: EdgeMap) -> np.ndarray:
    """Non-maximum suppression along the gradient; ties keep the first pixel."""
    s = np.pad(edges.strength, 1)
    ang = np.mod(np.degrees(np.arctan2(edges.gy, edges.gx)), 180.0)
    sector = (np.round(ang / 45.0).astype(int)) % 4
    offsets = [(0, 1), (1, 1), (1, 0), (1, -1)]  # (drow, dcol) along gradient
    h, w = edges.strength.shape
    rows, cols = np.mgrid[0:h, 0:w]
    keep = np.zeros((h, w), dtype=bool)
    for k, (dr, dc) in enumerate(offsets):
        sel = sector == k
        fwd = s[rows + 1 + dr, cols + 1 + dc]
        bwd = s[rows + 1 - dr, cols + 1 - dc]
        keep |= sel & (edges.strength > bwd) & (edges.strength >= fwd)
    return keep & edges.binary


def _pair_at(rows, cols, ux, uy, ra, rb, shape):
    a = np.stack([np.rint(rows - ra * uy), np.rint(cols - ra * ux)], axis=1).astype(np.int64)
    b = np.stack([np.rint(rows + rb * uy), np.rint(cols + rb * ux)], axis=1).astype(np.int64)
    h, w = shape
    inside = ((a >= 0) & (a < [h, w])).all(1) & ((b >= 0) & (b < [h, w])).all(1)
    return a, b, inside


def sample_edge_pairs(edges: EdgeMap, gt_normals: NormalMap, budget: int,
                      rng: np.random.Generator, image_edges: Optional[EdgeMap] = None,
                      radius: tuple[int, int] = PAIR_RADIUS, oversample: int = 4,
                      balance_tol: float = 0.1) -> PointPairSet:
    """Pairs straddling edge pixels, labelled by the GT normal dot product.

    Positives (dot < 0.3) may come from any edge pixel; negatives
    (dot > 0.95) only from pixels that are edges of ``image_edges`` (which
    defaults to ``edges``).  When both classes occur, the majority is
    downsampled to at most ``1 + balance_tol`` times the minority.
    """
    if budget < 1:
        raise ParameterError("budget must be >= 1")
    img = image_edges if image_edges is not None else edges
    cand = edges.binary | img.binary
    rows, cols = np.nonzero(cand)
    if rows.size == 0:
        warnings.warn("no edge pixels to sample from", RuntimeWarning)
        return PointPairSet.empty()
    pick = rng.integers(0, rows.size, size=oversample * budget)
    r, c = rows[pick], cols[pick]
    on_main = edges.binary[r, c]
    gx = np.where(on_main, edges.gx[r, c], img.gx[r, c])
    gy = np.where(on_main, edges.gy[r, c], img.gy[r, c])
    norm = np.hypot(gx, gy)
    ok = norm > 0
    ux = np.where(ok, gx / np.where(ok, norm, 1.0), 0.0)
    uy = np.where(ok, gy / np.where(ok, norm, 1.0), 0.0)
    ra = rng.integers(radius[0], radius[1] + 1, size=r.size)
    rb = rng.integers(radius[0], radius[1] + 1, size=r.size)
    a, b, inside = _pair_at(r, c, ux, uy, ra, rb, cand.shape)
    keep = ok & inside
    a, b, r, c = a[keep], b[keep], r[keep], c[keep]
    valid = gt_normals.mask[a[:, 0], a[:, 1]] & gt_normals.mask[b[:, 0], b[:, 1]]
    a, b, r, c = a[valid], b[valid], r[valid], c[valid]
    na = gt_normals.normals[a[:, 0], a[:, 1]]
    nb = gt_normals.normals[b[:, 0], b[:, 1]]
    dot = np.einsum("ij,ij->i", na, nb)
    pos = np.nonzero(dot < POSITIVE_DOT)[0]
    neg = np.nonzero((dot > NEGATIVE_DOT) & img.binary[r, c])[0]

    if pos.size and neg.size:
        n_min = min(pos.size, neg.size, (budget + 1) // 2)
        n_max = min(max(pos.size, neg.size), int(math.floor(n_min * (1 + balance_tol))),
                    budget - n_min)
        n_pos, n_neg = (n_min, n_max) if pos.size <= neg.size else (n_max, n_min)
        pos, neg = pos[:n_pos], neg[:n_neg]
    else:
        pos, neg = pos[:budget], neg[:budget]
    idx = np.concatenate([pos, neg])
    labels = np.concatenate([np.full(pos.size, PairLabel.EDGE_POSITIVE),
                             np.full(neg.size, PairLabel.EDGE_NEGATIVE)]).astype(np.int64)
    if idx.size == 0:
        warnings.warn("no pair satisfied the normal-angle constraints", RuntimeWarning)
        return PointPairSet.empty()
    return PointPairSet(a[idx], b[idx], labels, np.stack([na[idx], nb[idx]], axis=1))


def _segment_from_pixels(pix: np.ndarray, grid: np.ndarray, label: int) -> Optional[PlaneSegment]:
    try:
        n, off, rms = fit_plane(grid[pix[:, 0], pix[:, 1]])
    except DegenerateFitError:
        return None
    return PlaneSegment(pix, n, off, rms, label)


def cluster_planes(normals: NormalMap, depth: DepthMap, cam: CameraIntrinsics,
                   eps: float = 0.05, min_pts: int = 50, exclude_edges: bool = True,
                   edge_dilation: int = 1, quantum: Optional[float] = None) -> list[PlaneSegment]:
    """DBSCAN over per-pixel (normal, plane offset / scene diagonal) features.

    Pixels on normal-map edges are dropped first (their windows straddle
    two surfaces), features are binned to ``quantum`` (default ``eps / 4``)
    and clustered with bin counts as sample weights, then each cluster is
    split into 8-connected image components and refit with :func:`fit_plane`.
    Components smaller than ``min_pts`` are discarded.  Segments come back
    largest first.
    """
    if not eps > 0:
        raise ParameterError("eps must be positive")
    grid = unproject_grid(depth, cam)
    valid = normals.mask & depth.mask
    if exclude_edges and valid.any():
        e = detect_edges(normals).binary
        if edge_dilation > 0:
            e = ndimage.binary_dilation(e, iterations=edge_dilation)
        valid &= ~e
    rows, cols = np.nonzero(valid)
    if rows.size < min_pts:
        return []
    pts = grid[rows, cols]
    diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0))) or 1.0
    n = normals.normals[rows, cols]
    feat = np.concatenate([n, (np.einsum("ij,ij->i", n, pts) / diag)[:, None]], axis=1)

    q = quantum or eps / 4.0
    keys = np.floor(feat / q).astype(np.int64)
    uniq, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    centres = (uniq + 0.5) * q
    db = DBSCAN(eps=eps, min_samples=min_pts).fit(centres, sample_weight=counts)
    bin_label = db.labels_
    pix_label = bin_label[inverse]

    label_img = np.full(depth.shape, -1, dtype=np.int64)
    label_img[rows, cols] = pix_label
    segments = []
    for lab in np.unique(pix_label):
        if lab < 0:
            continue
        comp, n_comp = ndimage.label(label_img == lab, structure=np.ones((3, 3)))
        for k in range(1, n_comp + 1):
            pr, pc = np.nonzero(comp == k)
            if pr.size < min_pts:
                continue
            seg = _segment_from_pixels(np.stack([pr, pc], axis=1), grid, int(lab))
            if seg is not None:
                segments.append(seg)
    segments.sort(key=lambda s: (-len(s), int(s.pixels[0, 0]), int(s.pixels[0, 1])))
    for i, s in enumerate(segments):
        s.label = i
    return segments


def segments_from_mask(mask: np.ndarray, depth: DepthMap, cam: CameraIntrinsics,
                       min_pts: int = 50) -> list[PlaneSegment]:
    """Planar segments from an external mask (nonzero = planar), one per component."""
    grid = unproject_grid(depth, cam)
    sel = (np.asarray(mask) != 0) & depth.mask
    comp, n_comp = ndimage.label(sel, structure=np.ones((3, 3)))
    out = []
    for k in range(1, n_comp + 1):
        pr, pc = np.nonzero(comp == k)
        if pr.size < max(min_pts, 3):
            continue
        seg = _segment_from_pixels(np.stack([pr, pc], axis=1), grid, k - 1)
        if seg is not None:
            out.append(seg)
    return out


def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    share = weights / weights.sum() * total
    base = np.floor(share).astype(np.int64)
    rest = total - base.sum()
    order = np.argsort(-(share - base), kind="stable")
    base[order[:rest]] += 1
    return base


def sample_coplanar_pairs(segments: list[PlaneSegment], budget: int,
                          rng: np.random.Generator) -> PointPairSet:
    """Intra-segment pairs, budget split in proportion to segment area."""
    if not segments:
        raise ParameterError("need at least one segment")
    usable = [s for s in segments if len(s) >= 2]
    if not usable or budget < 1:
        return PointPairSet.empty()
    counts = _largest_remainder(np.array([len(s) for s in usable], float), budget)
    out = []
    for seg, k in zip(usable, counts):
        if k == 0:
            continue
        m = len(seg)
        i = rng.integers(0, m, size=k)
        j = rng.integers(0, m - 1, size=k)
        j = j + (j >= i)  # distinct partner
        nrm = np.broadcast_to(seg.normal, (k, 2, 3)).copy()
        out.append(PointPairSet(seg.pixels[i], seg.pixels[j],
                                np.full(k, PairLabel.COPLANAR, np.int64), nrm))
    return PointPairSet.concat(*out)
