"""Training losses with analytic gradients, plus the per-data-quality router.

Every loss returns a :class:`LossValue` whose ``gradient`` has the shape of
the quantity being differentiated: the predicted depth grid for raster
losses, the predicted normals for PWN, the predicted pair depths for SR.
The subgradient of ``|x|`` at 0 is taken as 0.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .camera import DepthMap
from .errors import (DegenerateNormalizationError, EmptyOverlapError, ParameterError,
                     SingularSystemError, UnsupportedCombinationError)

SR_TAU = 0.02
MSG_SCALES = 4
TRIM_FRACTION = 0.1
TANH_SCALE = 100.0


@dataclass
class LossValue:
    value: float
    gradient: np.ndarray


@dataclass(frozen=True)
class TrimStats:
    mu_trim: float
    sigma_trim: float
    n_kept: int


class QualityTier(str, Enum):
    HIGH = "high"
    MEDIUM = "medium"
    LOW = "low"


def _joint(pred: DepthMap, gt: DepthMap) -> np.ndarray:
    if pred.shape != gt.shape:
        raise ParameterError(f"shape mismatch {pred.shape} vs {gt.shape}")
    return pred.mask & gt.mask


def _values(x) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(x, DepthMap):
        return x.values, x.mask
    x = np.asarray(x, dtype=np.float64)
    return x, np.isfinite(x)


def align_scale_shift(pred, gt, mask: Optional[np.ndarray] = None) -> tuple[float, float]:
    """Least-squares ``(s, t)`` minimising ``sum (s * pred + t - gt)^2``."""
    p, pm = _values(pred)
    g, gm = _values(gt)
    m = pm & gm if mask is None else (pm & gm & mask)
    x, y = p[m], g[m]
    n = x.size
    if n < 2:
        raise SingularSystemError(f"need >= 2 overlapping pixels, got {n}")
    # centred form of the 2x2 normal equations
    xm, ym = x.mean(), y.mean()
    xc = x - xm
    sxx = float(xc @ xc)
    if sxx <= 1e-24 * max(1.0, float(x @ x)):
        raise SingularSystemError("prediction is constant on the overlap")
    s = float(xc @ (y - ym)) / sxx
    return s, float(ym - s * xm)


def trim_stats(values: np.ndarray, fraction: float = TRIM_FRACTION) -> TrimStats:
    """Mean and (population) std after dropping ``floor(fraction*N)`` per tail."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    n = v.size
    k = int(math.floor(fraction * n)) if n >= 10 else 0
    kept = v[k:n - k]
    if kept.size == 0:
        raise DegenerateNormalizationError("nothing left after trimming")
    return TrimStats(float(kept.mean()), float(kept.std()), int(kept.size))


def ilnr_normalize(gt: DepthMap) -> DepthMap:
    st = trim_stats(gt.valid_values())
    if not st.sigma_trim > 0:
        raise DegenerateNormalizationError("trimmed ground truth is constant")
    out = np.where(gt.mask, (gt.values - st.mu_trim) / st.sigma_trim, 0.0)
    return DepthMap(out, gt.mask, unit="affine")


def normalize_variants(gt: DepthMap, method: str) -> DepthMap:
    v = gt.valid_values()
    if method == "ilnr":
        return ilnr_normalize(gt)
    if method == "minmax":
        shift, scale = v.min(), v.max() - v.min()
    elif method == "zscore":
        shift, scale = v.mean(), v.std()
    elif method == "mad":
        shift = np.median(v)
        scale = np.median(np.abs(v - shift))
    else:
        raise ParameterError(f"unknown normalization {method!r}")
    if not scale > 0:
        raise DegenerateNormalizationError(f"{method} denominator is zero")
    out = np.where(gt.mask, (gt.values - shift) / scale, 0.0)
    return DepthMap(out, gt.mask, unit="affine")


def ilnr_loss(pred: DepthMap, gt: DepthMap) -> LossValue:
    m = _joint(pred, gt)
    n = int(m.sum())
    if n == 0:
        raise EmptyOverlapError("no jointly valid pixels")
    st = trim_stats(gt.values[m])
    if not st.sigma_trim > 0:
        raise DegenerateNormalizationError("trimmed ground truth is constant")
    d = pred.values[m]
    dn = (gt.values[m] - st.mu_trim) / st.sigma_trim
    th_d = np.tanh(d / TANH_SCALE)
    r1 = d - dn
    r2 = th_d - np.tanh(dn / TANH_SCALE)
    value = float(np.sum(np.abs(r1) + np.abs(r2)) / n)
    g = np.sign(r1) + np.sign(r2) * (1.0 - th_d ** 2) / TANH_SCALE
    grad = np.zeros(pred.shape)
    grad[m] = g / n
    return LossValue(value, grad)


def mae_loss(pred: DepthMap, gt: DepthMap) -> LossValue:
    m = _joint(pred, gt)
    n = int(m.sum())
    if n == 0:
        raise EmptyOverlapError("no jointly valid pixels")
    r = pred.values[m] - gt.values[m]
    grad = np.zeros(pred.shape)
    grad[m] = np.sign(r) / n
    return LossValue(float(np.abs(r).sum() / n), grad)


def ssmae_loss(pred: DepthMap, gt: DepthMap) -> LossValue:
    """Scale-and-shift invariant MAE: align by least squares, then MAE.

    The gradient includes the dependence of the alignment on ``pred``.
    """
    m = _joint(pred, gt)
    s, t = align_scale_shift(pred, gt)
    p, g = pred.values[m], gt.values[m]
    n = p.size
    e = np.sign(s * p + t - g)
    value = float(np.abs(s * p + t - g).sum() / n)
    # d(s, t)/dp_i = A^{-1} [g_i - 2 s p_i - t, -s]
    A = np.array([[p @ p, p.sum()], [p.sum(), n]])
    v = np.linalg.solve(A, np.array([e @ p, e.sum()]))
    gi = e * s + v[0] * (g - 2 * s * p - t) - v[1] * s
    grad = np.zeros(pred.shape)
    grad[m] = gi / n
    return LossValue(value, grad)


def _pool(x: np.ndarray, m: np.ndarray, k: int):
    """Average-pool by ``k``; a cell is valid only if its whole block is."""
    if k == 1:
        return x, m
    h, w = (x.shape[0] // k) * k, (x.shape[1] // k) * k
    xb = x[:h, :w].reshape(h // k, k, w // k, k)
    mb = m[:h, :w].reshape(h // k, k, w // k, k)
    return xb.mean(axis=(1, 3)), mb.all(axis=(1, 3))


def _unpool_grad(g: np.ndarray, k: int, shape: tuple[int, int]) -> np.ndarray:
    out = np.zeros(shape)
    if k == 1:
        out[:] = g
        return out
    h, w = g.shape[0] * k, g.shape[1] * k
    out[:h, :w] = np.repeat(np.repeat(g, k, axis=0), k, axis=1) / (k * k)
    return out


def msg_loss(pred: DepthMap, gt_norm: DepthMap, scales: int = MSG_SCALES) -> LossValue:
    """Multi-scale gradient loss against an already normalised ground truth.

    Scale ``k`` (1-based) average-pools both maps by ``2**(k-1)`` and compares
    forward differences; only differences between two valid cells count.
    The sum over all scales is divided by the full-resolution valid count.
    """
    if scales < 1:
        raise ParameterError("need at least one scale")
    m = _joint(pred, gt_norm)
    n = int(m.sum())
    if n == 0:
        raise EmptyOverlapError("no jointly valid pixels")
    d = np.where(m, pred.values, 0.0)
    r = d - np.where(m, gt_norm.values, 0.0)
    total = 0.0
    grad = np.zeros(pred.shape)
    for k in range(1, scales + 1):
        step = 2 ** (k - 1)
        if min(pred.shape) // step < 2:
            warnings.warn(f"map too small for scale {k}; truncated to {k - 1} scales",
                          RuntimeWarning)
            break
        rp, mp = _pool(r, m, step)
        g = np.zeros_like(rp)
        dx = rp[:, 1:] - rp[:, :-1]
        vx = mp[:, 1:] & mp[:, :-1]
        dy = rp[1:, :] - rp[:-1, :]
        vy = mp[1:, :] & mp[:-1, :]
        total += np.abs(dx[vx]).sum() + np.abs(dy[vy]).sum()
        sx = np.where(vx, np.sign(dx), 0.0)
        sy = np.where(vy, np.sign(dy), 0.0)
        g[:, 1:] += sx
        g[:, :-1] -= sx
        g[1:, :] += sy
        g[:-1, :] -= sy
        grad += _unpool_grad(g, step, pred.shape)
    grad[~m] = 0.0
    return LossValue(float(total / n), grad / n)


def ordinal_labels(d0: np.ndarray, d1: np.ndarray, tau: float = SR_TAU) -> np.ndarray:
    """+1 if d0/d1 >= 1+tau, -1 if d1/d0 >= 1+tau, else 0."""
    d0 = np.asarray(d0, dtype=np.float64)
    d1 = np.asarray(d1, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        lab = np.where(d0 / d1 >= 1 + tau, 1, np.where(d1 / d0 >= 1 + tau, -1, 0))
    return lab.astype(np.int64)


@dataclass
class RankingLoss(LossValue):
    skipped: int = 0


def sr_loss(pred_pairs: np.ndarray, gt_pairs: np.ndarray, tau: float = SR_TAU) -> RankingLoss:
    """Structure-guided ranking loss over (N, 2) arrays of pair depths.

    Pairs whose ground truth has a non-positive depth are skipped and counted.
    """
    if not tau > 0:
        raise ParameterError("tau must be positive")
    pred_pairs = np.asarray(pred_pairs, dtype=np.float64).reshape(-1, 2)
    gt_pairs = np.asarray(gt_pairs, dtype=np.float64).reshape(-1, 2)
    if pred_pairs.shape != gt_pairs.shape:
        raise ParameterError("pair lists differ in length")
    keep = (gt_pairs > 0).all(axis=1)
    skipped = int((~keep).sum())
    grad = np.zeros_like(pred_pairs)
    n = int(keep.sum())
    if n == 0:
        return RankingLoss(0.0, grad, skipped)
    lab = ordinal_labels(gt_pairs[keep, 0], gt_pairs[keep, 1], tau)
    x = pred_pairs[keep, 0] - pred_pairs[keep, 1]
    strict = lab != 0
    z = -lab * x
    per = np.where(strict, np.logaddexp(0.0, z), x ** 2)
    # d/dx log(1 + exp(-l x)) = -l * sigmoid(-l x)
    sig = np.exp(-np.logaddexp(0.0, -z))
    dx = np.where(strict, -lab * sig, 2 * x)
    g = np.zeros((n, 2))
    g[:, 0] = dx / n
    g[:, 1] = -dx / n
    grad[keep] = g
    return RankingLoss(float(per.sum() / n), grad, skipped)


def sr_loss_map(pred: DepthMap, gt: DepthMap, pairs_a: np.ndarray, pairs_b: np.ndarray,
                tau: float = SR_TAU) -> RankingLoss:
    """SR loss on pixel pairs of a depth grid; gradient scattered back to the grid."""
    a = np.asarray(pairs_a).reshape(-1, 2)
    b = np.asarray(pairs_b).reshape(-1, 2)
    pp = np.stack([pred.values[a[:, 0], a[:, 1]], pred.values[b[:, 0], b[:, 1]]], axis=1)
    gp = np.stack([gt.values[a[:, 0], a[:, 1]], gt.values[b[:, 0], b[:, 1]]], axis=1)
    res = sr_loss(pp, gp, tau)
    grad = np.zeros(pred.shape)
    np.add.at(grad, (a[:, 0], a[:, 1]), res.gradient[:, 0])
    np.add.at(grad, (b[:, 0], b[:, 1]), res.gradient[:, 1])
    return RankingLoss(res.value, grad, res.skipped)


def pwn_loss(pred_normals: np.ndarray, gt_normals: Optional[np.ndarray] = None,
             gt_dots: Optional[np.ndarray] = None) -> LossValue:
    """Pair-wise normal loss, ``mean |nA . nB - nA* . nB*|``.

    ``pred_normals`` is (N, 2, 3).  The ground truth is given either as
    normal pairs or directly as target dot products (1 for coplanar pairs).
    The gradient is (N, 2, 3), with respect to the raw predicted vectors.
    """
    pn = np.asarray(pred_normals, dtype=np.float64).reshape(-1, 2, 3)
    if gt_dots is None:
        if gt_normals is None:
            raise ParameterError("need gt_normals or gt_dots")
        gn = np.asarray(gt_normals, dtype=np.float64).reshape(-1, 2, 3)
        if gn.shape != pn.shape:
            raise ParameterError("pair lists differ in length")
        gt_dots = np.einsum("ij,ij->i", gn[:, 0], gn[:, 1])
    gt_dots = np.asarray(gt_dots, dtype=np.float64).ravel()
    if len(gt_dots) != len(pn):
        raise ParameterError("pair lists differ in length")
    n = len(pn)
    if n == 0:
        return LossValue(0.0, np.zeros((0, 2, 3)))
    r = np.einsum("ij,ij->i", pn[:, 0], pn[:, 1]) - gt_dots
    e = np.sign(r)[:, None] / n
    grad = np.stack([e * pn[:, 1], e * pn[:, 0]], axis=1)
    return LossValue(float(np.abs(r).sum() / n), grad)


def pwn_loss_map(pred_normals: np.ndarray, pairs) -> LossValue:
    """PWN over a :class:`~sceneshape.sampling.PointPairSet` on an (H, W, 3) normal grid."""
    pn = np.asarray(pred_normals, dtype=np.float64)
    a, b = pairs.a, pairs.b
    stacked = np.stack([pn[a[:, 0], a[:, 1]], pn[b[:, 0], b[:, 1]]], axis=1)
    res = pwn_loss(stacked, gt_dots=pairs.gt_dots)
    grad = np.zeros_like(pn)
    np.add.at(grad, (a[:, 0], a[:, 1]), res.gradient[:, 0])
    np.add.at(grad, (b[:, 0], b[:, 1]), res.gradient[:, 1])
    return LossValue(res.value, grad)


SR, ILNR, PWN_EDGES, PWN_PLANES, MSG, MAE = (
    "SR", "ILNR", "PWN-edges", "PWN-planes", "MSG", "MAE")

_ROUTES = {
    ("prediction", QualityTier.HIGH): frozenset({SR, ILNR, PWN_EDGES, PWN_PLANES, MSG}),
    ("prediction", QualityTier.MEDIUM): frozenset({SR, ILNR, PWN_PLANES, MSG}),
    ("prediction", QualityTier.LOW): frozenset({SR}),
    ("completion", QualityTier.HIGH): frozenset({SR, MAE, PWN_EDGES, PWN_PLANES}),
    ("completion", QualityTier.MEDIUM): frozenset({SR, MAE, PWN_PLANES}),
}


def route_losses(tier, task: str = "prediction") -> frozenset:
    tier = QualityTier(tier)
    if task not in ("prediction", "completion"):
        raise ParameterError(f"unknown task {task!r}")
    try:
        return _ROUTES[(task, tier)]
    except KeyError:
        raise UnsupportedCombinationError(
            f"no loss set for {tier.value}-quality data in the {task} task") from None
