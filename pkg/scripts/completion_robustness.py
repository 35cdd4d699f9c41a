"""Robust vs plain least-squares alignment of a relative prior to corrupted sparse depth.

    python3 scripts/completion_robustness.py --scenes 50 --outliers 0.05 --deform 0.01

``--deform`` is the amplitude of a smooth multiplicative error added to the
prior on top of its unknown affine map; 0 gives an exactly affine prior.
"""

import argparse

import numpy as np

from sceneshape.camera import DepthMap
from sceneshape.completion import (SparsityPattern, complete_depth, gen_sparsity,
                                   inject_outliers, plain_align_sparse, robust_align_sparse)
from sceneshape.metrics import absrel_delta
from sceneshape.synth import SceneConfig, generate_scene, render_depth


def make_prior(gt, rng, amp):
    h, w = gt.shape
    yy, xx = np.mgrid[0:h, 0:w] / h
    ph = rng.uniform(0, 2 * np.pi, 2)
    field = amp * np.sin(2 * np.pi * 0.7 * xx + ph[0]) * np.cos(2 * np.pi * 0.6 * yy + ph[1])
    s, t = rng.uniform(0.2, 5), rng.uniform(-2, 2)
    return DepthMap((gt.values * (1 + field) - t) / s, gt.mask, "affine")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenes", type=int, default=50)
    ap.add_argument("--samples", type=int, default=500)
    ap.add_argument("--outliers", type=float, default=0.05)
    ap.add_argument("--deform", type=float, default=0.01)
    args = ap.parse_args()

    cfg = SceneConfig()
    cam = cfg.camera()
    rows = []
    for s in range(args.scenes):
        rng = np.random.default_rng(1000 + s)
        gt, _, _ = render_depth(generate_scene(s, cfg), cam)
        prior = make_prior(gt, rng, args.deform)
        clean = gen_sparsity(gt, SparsityPattern("uniform", seed=s, count=args.samples))
        s0, t0 = plain_align_sparse(prior, clean)
        cor = inject_outliers(clean, args.outliers, rng)
        fit = robust_align_sparse(prior, cor)
        res = complete_depth(prior, cor, fit=fit)
        s_ls, _ = plain_align_sparse(prior, cor)
        flagged = np.flatnonzero(cor.mask & ~fit.inliers)
        det = np.isin(cor.outliers, flagged).mean() if cor.outliers.size else 1.0
        rows.append((abs(fit.s / s0 - 1), abs(fit.t - t0) / gt.valid_values().mean(), det,
                     absrel_delta(res.depth, gt, "none").absrel, abs(s_ls / s0 - 1)))
        print("scene %3d  robust s %.4f t %.4f  detect %.3f  AbsRel %.4f  LS s %.4f"
              % ((s,) + rows[-1]))
    r = np.array(rows)
    print("max robust s err %.2f%%  max t err %.2f%%  detection %.1f%%  max AbsRel %.4f"
          % (100 * r[:, 0].max(), 100 * r[:, 1].max(), 100 * r[:, 2].mean(), r[:, 3].max()))
    print("plain LS scale err: mean %.2f%%  median %.2f%%  max %.2f%%"
          % (100 * r[:, 4].mean(), 100 * np.median(r[:, 4]), 100 * r[:, 4].max()))


if __name__ == "__main__":
    main()
