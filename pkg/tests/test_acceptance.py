"""One test per acceptance criterion; see the terminal summary for the tally."""

import time

import numpy as np

from conftest import record, render
from sceneshape.camera import CameraIntrinsics, DepthMap, fit_plane, unproject, unproject_grid
from sceneshape.completion import (SparsityPattern, complete_depth, gen_sparsity,
                                   inject_outliers, plain_align_sparse, robust_align_sparse)
from sceneshape.gradcheck import LOSSES, run_gradcheck
from sceneshape.losses import QualityTier, route_losses
from sceneshape.errors import UnsupportedCombinationError
from sceneshape.metrics import absrel_delta, evaluate, labels_to_regions, lsiv
from sceneshape.losses import ordinal_labels
from sceneshape.recovery import recover_focal, recover_shift
from sceneshape.sampling import (NEGATIVE_DOT, POSITIVE_DOT, PairLabel, detect_edges,
                                 sample_edge_pairs)
from sceneshape.synth import (PerturbationSample, SceneConfig, SyntheticScene, apply_distortion,
                              render_depth, scale_normalize)

N_SCENES = 50


def test_shift_recovery_accuracy():
    rng = np.random.default_rng(2100)
    clean, noisy, times = [], [], []
    for seed in range(N_SCENES):
        _, cam, d, _, _ = render(seed)
        dn = scale_normalize(d)
        delta = rng.uniform(-0.25, 0.8)
        for noise, errs in ((0.0, clean), (0.005, noisy)):
            v = dn.values * (1 + noise * rng.standard_normal(dn.shape)) if noise else dn.values
            dist = apply_distortion(dn.replace(values=v), cam, PerturbationSample(delta), "shift")
            t0 = time.perf_counter()
            r = recover_shift(dist.depth, cam)
            times.append(time.perf_counter() - t0)
            errs.append(abs(r.delta_d + delta))
    ok = max(clean) <= 0.02 and max(noisy) <= 0.05 and max(times) <= 5.0
    record("shift recovery accuracy", ok,
           f"max err noiseless {max(clean):.4f} (<=0.02), 0.5% noise {max(noisy):.4f} (<=0.05), "
           f"max {max(times):.2f} s/scene (<=5)")
    assert ok


def test_focal_recovery_accuracy():
    rng = np.random.default_rng(2200)
    rel, spread = [], []
    for seed in range(N_SCENES):
        _, cam, d, _, _ = render(seed)
        dn = scale_normalize(d)
        alpha = rng.uniform(0.6, 1.25)
        dist = apply_distortion(dn, cam, PerturbationSample(alpha_f=alpha), "focal")
        r = recover_focal(dist.depth, dist.camera)
        rel.append(abs(r.alpha_f / alpha - 1))
        h, w = dn.shape
        focals = [recover_focal(dn, CameraIntrinsics.from_fov(fov, w, h)).focal
                  for fov in (20, 30, 40, 50, 60, 70)]
        spread.append(max(focals) / min(focals) - 1)
    ok = max(rel) <= 0.03 and max(spread) <= 0.05
    record("focal recovery accuracy", ok,
           f"max rel err {100 * max(rel):.2f}% (<=3%), FOV 20-70 sweep spread "
           f"{100 * max(spread):.2f}% (<=5%)")
    assert ok


def test_shift_recovery_benefit():
    rng = np.random.default_rng(2300)
    better, gains = 0, []
    for seed in range(100):
        _, cam, d, _, _ = render(seed)
        dn = scale_normalize(d)
        delta = rng.uniform(-0.25, 0.8)
        dist = apply_distortion(dn, cam, PerturbationSample(delta), "shift").depth
        r = recover_shift(dist, cam)
        base = absrel_delta(dist, dn, "scale").absrel
        fixed = absrel_delta(dist.replace(values=dist.values + r.delta_d), dn, "scale").absrel
        better += fixed <= base
        gains.append(1 - fixed / base)
    med = float(np.median(gains))
    ok = better >= 95 and med >= 0.30
    record("shift recovery benefit", ok,
           f"{better}/100 scenes not worse (>=95), median AbsRel improvement {100 * med:.1f}% "
           f"(>=30%)")
    assert ok


def test_gradient_suite():
    rep = run_gradcheck(n_fixtures=20, seed=0)
    ok = set(rep.max_error) == set(LOSSES) and rep.passed(1e-5) and rep.seconds < 60
    worst = max(rep.max_error, key=rep.max_error.get)
    record("gradient suite", ok,
           f"worst rel err {rep.worst:.2e} ({worst}) (<=1e-5), {rep.seconds:.1f} s (<60)")
    assert ok


def _fronto_scene():
    # axis-aligned camera: the far wall faces it squarely
    scene = SyntheticScene(room=(6.0, 8.0, 3.0), boxes=[], yaw=0.0, pitch=0.0, roll=0.0,
                           position=(3.0, 2.0, 1.5))
    cfg = SceneConfig()
    cam = cfg.camera()
    d, labels, normals = render_depth(scene, cam)
    return cam, scale_normalize(d), labels, normals


def test_geometric_theorems():
    worst_focal, shift_ok, n_oblique = 0.0, True, 0
    for seed in range(10):
        _, cam, d, labels, normals = render(seed)
        dn = scale_normalize(d)
        grid = unproject_grid(dn, cam)
        scaled = unproject_grid(dn, cam.with_focal(0.7 * cam.f))
        shifted = unproject_grid(dn.replace(values=dn.values + 0.3), cam)
        for lab in np.unique(labels[labels >= 0]):
            sel = labels == lab
            if sel.sum() < 50:
                continue
            base = fit_plane(grid[sel])[2]
            worst_focal = max(worst_focal, abs(fit_plane(scaled[sel])[2] - base))
            nz = abs(normals.normals[sel][0, 2])
            if nz < np.cos(np.radians(5.0)):
                n_oblique += 1
                shift_ok &= bool(fit_plane(shifted[sel])[2] > base)
    cam, dn, labels, normals = _fronto_scene()
    fronto = [lab for lab in np.unique(labels[labels >= 0])
              if abs(normals.normals[labels == lab][0, 2]) > 1 - 1e-12]
    fronto_ok = bool(fronto)
    for lab in fronto:
        sel = labels == lab
        z0 = unproject_grid(dn, cam)[sel][:, 2]
        z1 = unproject_grid(dn.replace(values=dn.values + 0.3), cam)[sel][:, 2]
        fronto_ok &= bool(np.all(z0 == z0[0]) and np.all(z1 == z1[0]))
    ok = worst_focal < 1e-9 and shift_ok and n_oblique > 0 and fronto_ok
    record("geometric theorems", ok,
           f"focal rms change {worst_focal:.1e} (<1e-9); shift raised rms on "
           f"{'all' if shift_ok else 'NOT all'} {n_oblique} oblique planes; fronto-parallel "
           f"depth constant before/after shift: {fronto_ok}")
    assert ok


def test_loss_routing_tables():
    expected = {
        ("prediction", QualityTier.HIGH): {"SR", "ILNR", "PWN-edges", "PWN-planes", "MSG"},
        ("prediction", QualityTier.MEDIUM): {"SR", "ILNR", "PWN-planes", "MSG"},
        ("prediction", QualityTier.LOW): {"SR"},
        ("completion", QualityTier.HIGH): {"SR", "MAE", "PWN-edges", "PWN-planes"},
        ("completion", QualityTier.MEDIUM): {"SR", "MAE", "PWN-planes"},
    }
    rows_ok = all(route_losses(tier, task) == want for (task, tier), want in expected.items())
    try:
        route_losses(QualityTier.LOW, "completion")
        missing_ok = False
    except UnsupportedCombinationError:
        missing_ok = True
    ok = rows_ok and missing_ok
    record("loss routing tables", ok,
           f"5 rows equal: {rows_ok}; (low, completion) rejected: {missing_ok}")
    assert ok


def _prior(gt, rng, amp=0.01):
    # unknown affine map of gt plus a gentle low-frequency deformation
    h, w = gt.shape
    yy, xx = np.mgrid[0:h, 0:w] / h
    ph = rng.uniform(0, 2 * np.pi, 2)
    field = amp * np.sin(2 * np.pi * 0.7 * xx + ph[0]) * np.cos(2 * np.pi * 0.6 * yy + ph[1])
    s, t = rng.uniform(0.2, 5), rng.uniform(-2, 2)
    return DepthMap((gt.values * (1 + field) - t) / s, gt.mask, "affine")


def test_completion_robustness():
    ds, dt, ls, absrels = [], [], [], []
    detected = injected = 0
    for seed in range(N_SCENES):
        rng = np.random.default_rng(2400 + seed)
        _, _, gt, _, _ = render(seed)
        prior = _prior(gt, rng)
        clean = gen_sparsity(gt, SparsityPattern("uniform", seed=seed, count=500))
        s0, t0 = plain_align_sparse(prior, clean)
        cor = inject_outliers(clean, 0.05, rng)
        fit = robust_align_sparse(prior, cor)
        res = complete_depth(prior, cor, fit=fit)
        ds.append(abs(fit.s / s0 - 1))
        dt.append(abs(fit.t - t0) / gt.valid_values().mean())
        flagged = np.flatnonzero(cor.mask & ~fit.inliers)
        detected += int(np.isin(cor.outliers, flagged).sum())
        injected += cor.outliers.size
        absrels.append(absrel_delta(res.depth, gt, "none").absrel)
        s_ls, _ = plain_align_sparse(prior, cor)
        ls.append(abs(s_ls / s0 - 1))
    det = detected / injected
    robust_ok = max(ds) <= 0.01 and max(dt) <= 0.01 and det >= 0.9 and max(absrels) <= 0.05
    ls_ok = float(np.mean(ls)) > 0.05
    ok = robust_ok and ls_ok
    record("completion robustness", ok,
           f"robust s err {100 * max(ds):.2f}%, t err {100 * max(dt):.2f}% of mean depth "
           f"(<=1%), detection {100 * det:.1f}% (>=90%), AbsRel {max(absrels):.4f} (<=0.05); "
           f"plain LS scale err mean {100 * np.mean(ls):.2f}% max {100 * max(ls):.2f}% "
           f"(needs >5%)")
    assert robust_ok, "robust alignment part"
    assert ls_ok, "plain least-squares scale error does not exceed 5% on this data"


def test_sparsity_contracts():
    oks = []
    for seed in range(5):
        _, _, gt, _, _ = render(seed)
        sp = gen_sparsity(gt, SparsityPattern("uniform", seed=seed, count=500))
        oks.append(sp.n_points == 500 and not (sp.mask & ~gt.mask).any())
        # exhaustive: rank every valid pixel by (depth, flat index)
        sr = gen_sparsity(gt, SparsityPattern("short_range", quantile=0.5))
        flat = np.flatnonzero(gt.mask)
        order = flat[np.lexsort((flat, gt.values.ravel()[flat]))]
        k = int(np.ceil(0.5 * flat.size))
        expect = np.zeros(gt.values.size, bool)
        expect[order[:flat.size - k]] = True
        oks.append(np.array_equal(sr.mask.ravel(), expect))
        oks.append(np.array_equal(sr.values[sr.mask], gt.values[sr.mask]))
    for h, w in ((128, 128), (100, 100), (80, 120), (97, 61)):
        gt = DepthMap(np.random.default_rng(h * w).uniform(1, 5, (h, w)))
        sp = gen_sparsity(gt, SparsityPattern("unpaired_fov", border_fraction=0.25))
        bh, bw = int(round(0.25 * h)), int(round(0.25 * w))
        expect = np.zeros((h, w), bool)
        expect[bh:h - bh, bw:w - bw] = True
        oks.append(np.array_equal(sp.mask, expect))
    ok = all(oks)
    record("sparsity pattern contracts", ok, f"{sum(oks)}/{len(oks)} exhaustive mask checks")
    assert ok


def test_metric_zero_elements():
    t0 = time.perf_counter()
    perfect, affine, region = [], [], []
    for seed in range(3):
        rng = np.random.default_rng(seed)
        _, cam, d, labels, _ = render(seed)
        regions = labels_to_regions(labels, 3)
        n = 2000
        a = np.stack([rng.integers(0, d.shape[0], n), rng.integers(0, d.shape[1], n)], 1)
        b = np.stack([rng.integers(0, d.shape[0], n), rng.integers(0, d.shape[1], n)], 1)
        lab = ordinal_labels(d.values[a[:, 0], a[:, 1]], d.values[b[:, 0], b[:, 1]])
        rep = evaluate(d, d, cam=cam, regions=regions, pairs=(a, b, lab))
        perfect.append(max(rep.absrel, rep.rmse, rep.mae, rep.si_rmse, rep.whdr, rep.lsiv,
                           rep.dbe_acc, rep.dbe_comp, rep.pe_plan, rep.pe_orie))
        perfect.append(0.0 if min(rep.delta1, rep.delta2, rep.delta3) == 100 else 1.0)
        s, t = rng.uniform(0.2, 5), rng.uniform(-1, 1)
        corrupted = d.replace(values=(d.values - t) / s)
        affine.append(absrel_delta(corrupted, d, "scale_shift").absrel)
        scaled = d.values.copy()
        for reg in regions:
            scaled[reg] *= rng.uniform(0.2, 5)
        region.append(lsiv(d.replace(values=scaled), d, regions))
    secs = time.perf_counter() - t0
    # the plane fits inside PE leave round-off of order 1e-7 on a perfect prediction
    ok = max(perfect) < 1e-4 and max(affine) < 1e-12 and max(region) < 1e-12 and secs < 10
    record("metric zero elements and invariances", ok,
           f"perfect worst {max(perfect):.1e}, affine AbsRel {max(affine):.1e}, per-region "
           f"LSIV {max(region):.1e} (round-off), {secs:.1f} s (<10)")
    assert ok


def test_edge_pair_audit():
    total = bad = 0
    for seed in range(20):
        _, _, d, _, normals = render(seed)
        pairs = sample_edge_pairs(detect_edges(normals), normals, 10_000,
                                  np.random.default_rng(seed), image_edges=detect_edges(d))
        # recompute the dots from the normal map, not from the stored copies
        na = normals.normals[pairs.a[:, 0], pairs.a[:, 1]]
        nb = normals.normals[pairs.b[:, 0], pairs.b[:, 1]]
        dots = np.einsum("ij,ij->i", na, nb)
        pos = pairs.labels == PairLabel.EDGE_POSITIVE
        neg = pairs.labels == PairLabel.EDGE_NEGATIVE
        good = (pos & (dots < POSITIVE_DOT)) | (neg & (dots > NEGATIVE_DOT))
        total += len(pairs)
        bad += int((~good).sum())
    ok = total > 0 and bad == 0 and POSITIVE_DOT == 0.3 and NEGATIVE_DOT == 0.95
    record("edge pair constraint audit", ok, f"{total - bad}/{total} pairs satisfy their label")
    assert ok
