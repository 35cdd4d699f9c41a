"""Depth evaluation metrics.

Every function accepts :class:`DepthMap` inputs (or plain arrays, treated as
valid where finite) and evaluates on the overlap of the two validity masks.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy import ndimage

from .camera import CameraIntrinsics, DepthMap, PlaneSegment, angle_between, fit_plane
from .errors import DegenerateFitError, EmptyOverlapError, ParameterError, SingularSystemError
from .losses import SR_TAU, align_scale_shift, ordinal_labels
from .sampling import thin_edges, detect_edges

ALIGN_MODES = ("none", "scale", "scale_shift")
DELTA_FLOOR = 1e-8
DBE_MAX_DIST = 10.0


def _as_depth(x) -> DepthMap:
    return x if isinstance(x, DepthMap) else DepthMap(np.asarray(x, dtype=np.float64))


def _overlap(pred, gt, positive_gt: bool = True):
    p, g = _as_depth(pred), _as_depth(gt)
    if p.shape != g.shape:
        raise ParameterError(f"prediction is {p.shape} but ground truth is {g.shape}")
    m = p.mask & g.mask
    if positive_gt:
        m &= g.values > 0
    if not m.any():
        raise EmptyOverlapError("prediction and ground truth share no valid pixels")
    return p, g, m


def align(pred, gt, mode: str, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Prediction values after least-squares alignment to ``gt``."""
    if mode not in ALIGN_MODES:
        raise ParameterError(f"align must be one of {ALIGN_MODES}, got {mode!r}")
    p, g, m = _overlap(pred, gt)
    if mask is not None:
        m = m & mask
    if mode == "none":
        return p.values.copy()
    if mode == "scale":
        x, y = p.values[m], g.values[m]
        den = float(x @ x)
        if den <= 0:
            raise SingularSystemError("prediction is zero on the overlap")
        return p.values * (float(x @ y) / den)
    s, t = align_scale_shift(p, g, m)
    return s * p.values + t


class AbsRelDelta(NamedTuple):
    absrel: float
    delta1: float
    delta2: float
    delta3: float
    n: int


def absrel_delta(pred, gt, align_mode: str = "none") -> AbsRelDelta:
    """AbsRel and the delta_k inlier percentages (threshold 1.25^k)."""
    p, g, m = _overlap(pred, gt)
    d = align(p, g, align_mode)[m]
    ref = g.values[m]
    absrel = float(np.mean(np.abs(d - ref) / ref))
    d = np.maximum(d, DELTA_FLOOR)
    ratio = np.maximum(d / ref, ref / d)
    deltas = [float(100.0 * np.mean(ratio < 1.25 ** k)) for k in (1, 2, 3)]
    return AbsRelDelta(absrel, *deltas, int(m.sum()))


def rmse_mae(pred, gt, align_mode: str = "none") -> tuple[float, float]:
    p, g, m = _overlap(pred, gt)
    r = align(p, g, align_mode)[m] - g.values[m]
    return float(np.sqrt(np.mean(r * r))), float(np.mean(np.abs(r)))


def si_rmse(pred, gt) -> float:
    """RMSE of the log ratio after removing its mean (scale-invariant)."""
    p, g = _as_depth(pred), _as_depth(gt)
    m = p.mask & g.mask & (p.values > 0) & (g.values > 0)
    if not m.any():
        raise EmptyOverlapError("no pixels with positive prediction and ground truth")
    r = np.log(p.values[m]) - np.log(g.values[m])
    r = r - r.mean()
    return float(np.sqrt(np.mean(r * r)))


def whdr(pred, pairs_a: np.ndarray, pairs_b: np.ndarray, gt_labels: np.ndarray,
         tau: float = SR_TAU, strict_only: bool = False) -> float:
    """Percentage of ordinal pairs whose predicted label disagrees with gt.

    Labels follow the SR-loss rule (+1 farther, -1 closer, 0 equal within
    ``tau``).  With ``strict_only`` pairs labelled 0 in gt are ignored.
    """
    a = np.asarray(pairs_a, dtype=np.int64).reshape(-1, 2)
    b = np.asarray(pairs_b, dtype=np.int64).reshape(-1, 2)
    lab = np.asarray(gt_labels, dtype=np.int64).ravel()
    if not (len(a) == len(b) == len(lab)):
        raise ParameterError("pair arrays and labels differ in length")
    if strict_only:
        keep = lab != 0
        a, b, lab = a[keep], b[keep], lab[keep]
    if len(lab) == 0:
        raise EmptyOverlapError("no ordinal pairs to evaluate")
    v = _as_depth(pred).values
    predicted = ordinal_labels(v[a[:, 0], a[:, 1]], v[b[:, 0], b[:, 1]], tau)
    return float(100.0 * np.mean(predicted != lab))


def _region_masks(regions, shape) -> list[np.ndarray]:
    out = []
    for r in regions:
        if isinstance(r, PlaneSegment):
            m = np.zeros(shape, dtype=bool)
            m[r.pixels[:, 0], r.pixels[:, 1]] = True
        else:
            r = np.asarray(r)
            if r.dtype == bool:
                if r.shape != shape:
                    raise ParameterError("region mask shape differs from depth")
                m = r
            else:
                m = np.zeros(shape, dtype=bool)
                m[r[:, 0], r[:, 1]] = True
        out.append(m)
    return out


def labels_to_regions(labels: np.ndarray, min_pixels: int = 2) -> list[np.ndarray]:
    """Boolean region masks from a label image (negative = unlabelled)."""
    return [labels == k for k in np.unique(labels) if k >= 0 and (labels == k).sum() >= min_pixels]


class RegionScore(NamedTuple):
    value: float
    n_regions: int
    skipped: int


def lsiv(pred, gt, regions: Sequence, detail: bool = False):
    """Locally scale-invariant RMSE: an independent best scale per region.

    ``regions`` holds boolean masks, (M, 2) pixel arrays or plane segments.
    Regions whose prediction is all zero are skipped; with ``detail`` the
    skip count is returned alongside the value.
    """
    p, g, m = _overlap(pred, gt, positive_gt=False)
    sq, count, skipped, used = 0.0, 0, 0, 0
    for r in _region_masks(regions, p.shape):
        r = r & m
        if r.sum() < 2:
            raise ParameterError("every region needs >= 2 valid pixels")
        x, y = p.values[r], g.values[r]
        den = float(x @ x)
        if den <= 0:
            skipped += 1
            continue
        e = (float(x @ y) / den) * x - y
        sq += float(e @ e)
        count += e.size
        used += 1
    if count == 0:
        raise EmptyOverlapError("no usable regions")
    value = math.sqrt(sq / count)
    return RegionScore(value, used, skipped) if detail else value


def global_scale_rmse(pred, gt, regions: Sequence) -> float:
    """Same as :func:`lsiv` but with one scale shared by all regions."""
    p, g, m = _overlap(pred, gt, positive_gt=False)
    union = np.zeros(p.shape, dtype=bool)
    for r in _region_masks(regions, p.shape):
        union |= r & m
    x, y = p.values[union], g.values[union]
    den = float(x @ x)
    if den <= 0:
        raise SingularSystemError("prediction is zero on the regions")
    e = (float(x @ y) / den) * x - y
    return float(np.sqrt(np.mean(e * e)))


@dataclass
class DBEResult:
    acc: Optional[float]
    comp: float
    n_pred_edges: int
    n_gt_edges: int


def depth_edges(depth, threshold: Optional[float] = None) -> np.ndarray:
    d = _as_depth(depth)
    kw = {} if threshold is None else {"threshold": threshold}
    return thin_edges(detect_edges(d, **kw))


def dbe(pred, gt, max_dist: float = DBE_MAX_DIST,
        pred_edges: Optional[np.ndarray] = None, gt_edges: Optional[np.ndarray] = None) -> DBEResult:
    """Depth boundary errors (accuracy, completeness) in pixels.

    Edges are thinned Sobel edges of each map unless given explicitly.
    Accuracy averages, over predicted edge pixels, the distance to the
    nearest gt edge; completeness swaps the roles.  Distances are truncated
    at ``max_dist``.
    """
    pe = depth_edges(pred) if pred_edges is None else np.asarray(pred_edges, dtype=bool)
    ge = depth_edges(gt) if gt_edges is None else np.asarray(gt_edges, dtype=bool)
    if pe.shape != ge.shape:
        raise ParameterError("edge maps differ in shape")

    def dist_to(edges):
        if not edges.any():
            return np.full(edges.shape, float(max_dist))
        return np.minimum(ndimage.distance_transform_edt(~edges), max_dist)

    acc = float(dist_to(ge)[pe].mean()) if pe.any() else None
    comp = float(dist_to(pe)[ge].mean()) if ge.any() else 0.0
    return DBEResult(acc, comp, int(pe.sum()), int(ge.sum()))


class PEResult(NamedTuple):
    plan: float
    orie: float
    n_regions: int
    skipped: int


def pe(pred, gt, cam: CameraIntrinsics, regions: Sequence, pred_cam: Optional[CameraIntrinsics] = None,
       align_mode: str = "scale_shift", unit_scale: float = 100.0) -> PEResult:
    """Planarity errors: flatness (cm for metric depth) and orientation (deg).

    The prediction is aligned to gt first, then both are un-projected
    (``pred_cam`` defaults to ``cam``).  Per region, ``plan`` is the std of
    predicted points' distances to their own best-fit plane and ``orie`` the
    angle between predicted and gt plane normals.  ``unit_scale`` converts
    depth units to the reported flatness unit.
    """
    p, g, m = _overlap(pred, gt)
    d = align(p, g, align_mode)
    pc = pred_cam or cam
    pr = pc.rays() * d[..., None]
    gr = cam.rays() * g.values[..., None]
    plans, ories, skipped = [], [], 0
    for r in _region_masks(regions, p.shape):
        r = r & m
        if r.sum() < 3:
            raise ParameterError("every region needs >= 3 valid pixels")
        try:
            n_p, off, _ = fit_plane(pr[r])
            n_g, _, _ = fit_plane(gr[r])
        except DegenerateFitError:
            skipped += 1
            continue
        dist = pr[r] @ n_p - off
        plans.append(float(np.std(dist)) * unit_scale)
        ories.append(float(angle_between(n_p, n_g)))
    if not plans:
        raise EmptyOverlapError("no usable plane regions")
    return PEResult(float(np.mean(plans)), float(np.mean(ories)), len(plans), skipped)


@dataclass
class MetricsReport:
    absrel: Optional[float] = None
    delta1: Optional[float] = None
    delta2: Optional[float] = None
    delta3: Optional[float] = None
    rmse: Optional[float] = None
    mae: Optional[float] = None
    si_rmse: Optional[float] = None
    whdr: Optional[float] = None
    lsiv: Optional[float] = None
    dbe_acc: Optional[float] = None
    dbe_comp: Optional[float] = None
    pe_plan: Optional[float] = None
    pe_orie: Optional[float] = None
    n_pixels: int = 0
    alignment: dict = field(default_factory=dict)

    METRICS = ("absrel", "delta1", "delta2", "delta3", "rmse", "mae", "si_rmse", "whdr",
               "lsiv", "dbe_acc", "dbe_comp", "pe_plan", "pe_orie")

    def items(self):
        for name in self.METRICS:
            v = getattr(self, name)
            if v is not None:
                yield name, v, self.alignment.get(name, "none")

    def to_dict(self) -> dict:
        out = {name: v for name, v, _ in self.items()}
        out["n_pixels"] = self.n_pixels
        out["alignment"] = dict(self.alignment)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value", "alignment", "n_pixels"])
        for name, v, mode in self.items():
            w.writerow([name, format(v, ".17g"), mode, self.n_pixels])
        return buf.getvalue()

    def to_table(self) -> str:
        rows = [(name, f"{v:.6g}", mode) for name, v, mode in self.items()]
        if not rows:
            return "(no metrics)\n"
        wn = max(len(r[0]) for r in rows + [("metric", "", "")])
        wv = max(len(r[1]) for r in rows + [("", "value", "")])
        lines = [f"{'metric':<{wn}}  {'value':>{wv}}  alignment"]
        lines += [f"{n:<{wn}}  {v:>{wv}}  {m}" for n, v, m in rows]
        lines.append(f"pixels: {self.n_pixels}")
        return "\n".join(lines) + "\n"


def evaluate(pred, gt, align_mode: str = "scale_shift", cam: Optional[CameraIntrinsics] = None,
             regions: Optional[Sequence] = None, pairs=None, tau: float = SR_TAU,
             dbe_max_dist: float = DBE_MAX_DIST) -> MetricsReport:
    """Compute every metric the inputs allow.

    ``pairs`` is ``(pairs_a, pairs_b, gt_labels)``; PE needs ``cam`` and
    ``regions``; LSIV needs ``regions``.
    """
    rep = MetricsReport()
    ad = absrel_delta(pred, gt, align_mode)
    rep.absrel, rep.delta1, rep.delta2, rep.delta3 = ad.absrel, ad.delta1, ad.delta2, ad.delta3
    rep.n_pixels = ad.n
    rep.rmse, rep.mae = rmse_mae(pred, gt, align_mode)
    for k in ("absrel", "delta1", "delta2", "delta3", "rmse", "mae"):
        rep.alignment[k] = align_mode
    rep.si_rmse = si_rmse(pred, gt)
    rep.alignment["si_rmse"] = "scale"
    if pairs is not None:
        rep.whdr = whdr(pred, *pairs, tau=tau)
        rep.alignment["whdr"] = "none"
    if regions:
        rep.lsiv = lsiv(pred, gt, regions)
        rep.alignment["lsiv"] = "scale"
        if cam is not None:
            res = pe(pred, gt, cam, regions)
            rep.pe_plan, rep.pe_orie = res.plan, res.orie
            rep.alignment["pe_plan"] = rep.alignment["pe_orie"] = "scale_shift"
    d = dbe(pred, gt, dbe_max_dist)
    rep.dbe_acc, rep.dbe_comp = d.acc, d.comp
    rep.alignment["dbe_acc"] = rep.alignment["dbe_comp"] = "none"
    return rep
