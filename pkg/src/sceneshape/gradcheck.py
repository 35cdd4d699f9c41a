"""Central finite-difference checks for the analytic loss gradients.

Fixtures are random 16x16 maps drawn so that no absolute-value kink lies
within a few finite-difference steps of the evaluation point; a kink inside
the stencil makes the difference quotient meaningless rather than wrong.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .camera import DepthMap
from .losses import (ilnr_loss, mae_loss, msg_loss, ordinal_labels, pwn_loss_map, sr_loss_map,
                     trim_stats, SR_TAU, TANH_SCALE)
from .sampling import PairLabel, PointPairSet

LOSSES = ("ILNR", "MSG", "SR", "PWN", "MAE")
FD_STEP = 1e-6
SIZE = 16
# how far, in FD steps, every kink must be from the evaluation point
KINK_MARGIN = 100.0


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Normwise relative error ``max|a - n| / max(max|a|, max|n|)``."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(float(np.abs(a).max(initial=0.0)), float(np.abs(n).max(initial=0.0)))
    if scale == 0.0:
        return 0.0
    return float(np.abs(a - n).max() / scale)


def numeric_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray,
                     h: float = FD_STEP) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = fn(x)
        flat[i] = old - h
        fm = fn(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def _away_from(values: np.ndarray, target: np.ndarray, rng, margin: float) -> np.ndarray:
    """Nudge ``values`` so that ``|values - target| >= margin`` everywhere."""
    v = values.copy()
    close = np.abs(v - target) < margin
    v[close] = target[close] + np.where(rng.random(close.sum()) < 0.5, -1, 1) * 2 * margin
    return v


def _ilnr_case(rng):
    gt = rng.uniform(1.0, 5.0, (SIZE, SIZE))
    st = trim_stats(gt.ravel())
    target = (gt - st.mu_trim) / st.sigma_trim
    pred = _away_from(rng.normal(0.0, 1.0, gt.shape), target, rng, KINK_MARGIN * FD_STEP)
    g = DepthMap(gt)
    f = lambda x: ilnr_loss(DepthMap(x), g)
    return pred, f


def _mae_case(rng):
    gt = rng.uniform(1.0, 5.0, (SIZE, SIZE))
    pred = _away_from(rng.uniform(1.0, 5.0, gt.shape), gt, rng, KINK_MARGIN * FD_STEP)
    g = DepthMap(gt)
    f = lambda x: mae_loss(DepthMap(x), g)
    return pred, f


def _msg_case(rng):
    # forward differences of the residual at every scale must stay clear of 0;
    # a smooth random residual field with a tilt keeps them well away
    gt = rng.uniform(0.0, 1.0, (SIZE, SIZE))
    yy, xx = np.mgrid[0:SIZE, 0:SIZE].astype(float)
    while True:
        resid = rng.normal(0.0, 1.0, gt.shape) + 0.05 * (xx + yy)
        pred = gt + resid
        ok = True
        for k in range(4):
            s = 2 ** k
            r = resid.reshape(SIZE // s, s, SIZE // s, s).mean(axis=(1, 3))
            if min(np.abs(np.diff(r, axis=0)).min(), np.abs(np.diff(r, axis=1)).min()) \
                    < KINK_MARGIN * FD_STEP:
                ok = False
        if ok:
            break
    g = DepthMap(gt)
    f = lambda x: msg_loss(DepthMap(x), g)
    return pred, f


def _sr_case(rng, n_pairs: int = 64):
    gt = rng.uniform(1.0, 5.0, (SIZE, SIZE))
    pred = rng.uniform(1.0, 5.0, (SIZE, SIZE))
    a = rng.integers(0, SIZE, (n_pairs, 2))
    b = rng.integers(0, SIZE, (n_pairs, 2))
    keep = np.any(a != b, axis=1)
    a, b = a[keep], b[keep]
    # drop pairs sitting on a label boundary of the gt ratio test
    r = gt[a[:, 0], a[:, 1]] / gt[b[:, 0], b[:, 1]]
    keep = (np.abs(r - (1 + SR_TAU)) > 1e-3) & (np.abs(1 / r - (1 + SR_TAU)) > 1e-3)
    a, b = a[keep], b[keep]
    g = DepthMap(gt)
    f = lambda x: sr_loss_map(DepthMap(x), g, a, b)
    return pred, f


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _pwn_case(rng, n_pairs: int = 64):
    normals = _unit(rng.normal(0.0, 1.0, (SIZE, SIZE, 3)))
    a = rng.integers(0, SIZE, (n_pairs, 2))
    b = rng.integers(0, SIZE, (n_pairs, 2))
    keep = np.any(a != b, axis=1)
    a, b = a[keep], b[keep]
    n = len(a)
    gtn = _unit(rng.normal(0.0, 1.0, (n, 2, 3)))
    labels = rng.choice([int(PairLabel.EDGE_POSITIVE), int(PairLabel.COPLANAR)], n)
    pairs = PointPairSet(a, b, labels, gtn)
    # coplanar target dot is 1; keep predicted dots clear of every target
    dots = np.einsum("ij,ij->i", normals[a[:, 0], a[:, 1]], normals[b[:, 0], b[:, 1]])
    keep = np.abs(dots - pairs.gt_dots) > 1e-3
    pairs = PointPairSet(a[keep], b[keep], labels[keep], gtn[keep])
    f = lambda x: pwn_loss_map(x, pairs)
    return normals, f


_CASES = {"ILNR": _ilnr_case, "MSG": _msg_case, "SR": _sr_case, "PWN": _pwn_case,
          "MAE": _mae_case}


@dataclass
class GradcheckReport:
    max_error: dict = field(default_factory=dict)
    n_fixtures: int = 0
    seconds: float = 0.0

    @property
    def worst(self) -> float:
        return max(self.max_error.values()) if self.max_error else 0.0

    def passed(self, tol: float = 1e-5) -> bool:
        return self.worst <= tol


def check_loss(name: str, rng: np.random.Generator, h: float = FD_STEP) -> float:
    x, f = _CASES[name](rng)
    analytic = f(x).gradient
    numeric = numeric_gradient(lambda z: f(z).value, x, h)
    return relative_error(analytic, numeric)


def run_gradcheck(n_fixtures: int = 20, seed: int = 0, losses=LOSSES) -> GradcheckReport:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    rep = GradcheckReport(n_fixtures=n_fixtures)
    for name in losses:
        rep.max_error[name] = max(check_loss(name, rng) for _ in range(n_fixtures))
    rep.seconds = time.perf_counter() - t0
    return rep
